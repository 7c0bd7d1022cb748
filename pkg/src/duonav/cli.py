"""Command line entry point.

Exit codes: 0 on success, 2 on usage or configuration errors, 1 on runtime
failures.  ``AERODUO_SEED`` supplies the seed when ``--seed`` is absent.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import metrics
from .dataset import DatasetParams, build_dataset, load_manifest
from .episode import EpisodeConfig, EpisodeSpec, OracleDetector, episode_record, run_episode
from .errors import ConfigError, DuoNavError, GenerationError
from .formats import read_grid, read_traj, write_grid, write_traj
from .pilot import HeuristicPilot, Instruction, OraclePilot
from .world import UAVState, WorldGenParams, dumps_world, generate_world, load_world


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _pos_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _csv(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.split(",") if t)


def _int_csv(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in _csv(text))


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys use flag names without dashes."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("AERODUO_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"AERODUO_SEED must be an integer, got {env!r}") from None


def _write_text(path: str, text: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# ---------------------------------------------------------------- commands

def _world_params(args) -> WorldGenParams:
    return WorldGenParams(size=args.size, n_buildings=args.buildings, n_kiosks=args.kiosks,
                          n_targets=args.targets)


def cmd_gen_world(args) -> int:
    world = generate_world(_seed(args), _world_params(args))
    text = dumps_world(world)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        _write_text(args.out, text)
    return 0


def cmd_gen_dataset(args) -> int:
    seed = _seed(args)
    wp = _world_params(args)
    worlds = [generate_world(seed * 1000 + k, wp) for k in range(args.scenes)]
    params = DatasetParams(pairs_per_scene=args.pairs, unseen_map_scenes=args.holdout_scenes,
                           unseen_object_categories=args.holdout_categories)
    manifest = build_dataset(worlds, params, seed)
    path = manifest.save(args.out)
    print(f"{len(manifest.pairs)} pairs -> {path}")
    return 0


def _episode_job(job):
    root, rec, pilot_kind, map_mode, time_limit, outdir, seed = job
    world = load_world(os.path.join(root, rec["world"]))
    _, low_path = read_traj(os.path.join(root, rec["low_traj"]))
    inst = Instruction(**{k: tuple(v) if isinstance(v, list) else v for k, v in rec["instruction"].items()})
    sx, sy, sz = rec["start"]
    spec = EpisodeSpec(world, inst, UAVState((sx, sy, sz)), UAVState((sx, sy, rec["z_h"])), tuple(rec["target"]),
                       time_limit=time_limit, expert_time=rec["T_star"], expert_length=rec["L_star"],
                       episode_id=rec["pair_id"], seed=seed)
    cfg = EpisodeConfig(map_mode=map_mode)
    pilot = OraclePilot(low_path) if pilot_kind == "oracle" else HeuristicPilot()
    result = run_episode(spec, pilot, detector=OracleDetector(cfg.sensor, rec["target_id"]), cfg=cfg)
    eid = spec.episode_id
    files = {"low_traj": f"traj/{eid}_low.traj", "high_traj": f"traj/{eid}_high.traj"}
    write_traj(os.path.join(outdir, files["low_traj"]), result.low_times, result.low_traj)
    write_traj(os.path.join(outdir, files["high_traj"]), result.low_times, result.high_traj)
    if result.last_decision is not None:
        files["prob"] = f"maps/{eid}_prob.grid"
        pm = result.last_decision.prob_map
        os.makedirs(os.path.join(outdir, "maps"), exist_ok=True)
        write_grid(os.path.join(outdir, files["prob"]), "prob", pm.prob, pm.frame)
        files["occ"] = f"maps/{eid}_occ.grid"
        occ = result.last_occupancy
        write_grid(os.path.join(outdir, files["occ"]), "occ", occ.cells, occ.frame)
    return episode_record(spec, result, cfg, files, rec["split"], pilot_kind)


def cmd_run(args) -> int:
    head, recs = load_manifest(os.path.join(args.dataset, "manifest.jsonl"))
    if args.split:
        recs = [r for r in recs if r["split"] == args.split]
    recs = sorted(recs, key=lambda r: r["pair_id"])[:args.episodes]
    os.makedirs(os.path.join(args.out, "traj"), exist_ok=True)
    seed = _seed(args)
    jobs = [(args.dataset, r, args.pilot, args.map_mode, args.time_limit, args.out, seed) for r in recs]
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            out = list(pool.map(_episode_job, jobs))
    else:
        out = [_episode_job(j) for j in jobs]
    out.sort(key=lambda r: r["episode_id"])
    _write_text(os.path.join(args.out, "records.jsonl"),
                "".join(json.dumps(r, sort_keys=True) + "\n" for r in out))
    print(f"{len(out)} episodes -> {os.path.join(args.out, 'records.jsonl')}")
    return 0


def _check_splits(manifest_path: str) -> None:
    _, recs = load_manifest(manifest_path)
    scenes = {s: {r["scene_id"] for r in recs if r["split"] == s} for s in ("train", "unseen_map", "unseen_object")}
    cats = {s: {r["category"] for r in recs if r["split"] == s} for s in ("train", "unseen_object")}
    if scenes["train"] & scenes["unseen_map"]:
        raise DuoNavError("unseen_map scenes overlap train scenes")
    if cats["train"] & cats["unseen_object"]:
        raise DuoNavError("unseen_object categories overlap train categories")
    print("splits disjoint: ok")


def cmd_eval(args) -> int:
    if args.check_splits:
        _check_splits(args.check_splits)
    if not args.records:
        return 0
    with open(args.records, encoding="utf-8") as fh:
        rows = [metrics.EpisodeRow.from_record(json.loads(ln)) for ln in fh if ln.strip()]
    reports = metrics.reports_by_split(rows)
    if len(reports) > 1:
        reports.append(metrics.report(rows, "all"))
    for rep in reports:
        rep.check(args.success_radius)
    table = metrics.format_table(reports)
    sys.stdout.write(table)
    if args.out:
        _write_text(args.out + ".txt", table)
        _write_text(args.out + ".jsonl", metrics.format_jsonl(reports))
    return 0


def cmd_plot(args) -> int:
    from .plotting import heatmap_svg, trajectory_svg
    root = os.path.dirname(os.path.abspath(args.records))
    with open(args.records, encoding="utf-8") as fh:
        recs = [json.loads(ln) for ln in fh if ln.strip()]
    os.makedirs(args.out, exist_ok=True)
    for rec in recs:
        files = rec.get("files", {})
        for key in ("low_traj", "high_traj"):
            p = os.path.join(root, files.get(key, ""))
            if key not in files or not os.path.exists(p):
                raise FileNotFoundError(f"missing dump: {p}")
        _, low = read_traj(os.path.join(root, files["low_traj"]))
        _, high = read_traj(os.path.join(root, files["high_traj"]))
        bg = frame = None
        if "occ" in files:
            p = os.path.join(root, files["occ"])
            if not os.path.exists(p):
                raise FileNotFoundError(f"missing dump: {p}")
            _, bg, frame = read_grid(p)
        eid = rec["episode_id"]
        svg = trajectory_svg(bg, frame, {"low": low, "high": high}, title=f"{eid} {rec['outcome']}")
        with open(os.path.join(args.out, f"{eid}_traj.svg"), "wb") as fh:
            fh.write(svg)
        if "prob" in files:
            p = os.path.join(root, files["prob"])
            if not os.path.exists(p):
                raise FileNotFoundError(f"missing dump: {p}")
            _, prob, pframe = read_grid(p)
            with open(os.path.join(args.out, f"{eid}_prob.svg"), "wb") as fh:
                fh.write(heatmap_svg(np.nan_to_num(prob), pframe, title=eid))
    print(f"{len(recs)} episodes plotted -> {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="duonav", description="Dual-altitude UAV navigation toolkit")
    p.add_argument("--config", help="key = value file providing defaults for the subcommand flags")
    sub = p.add_subparsers(dest="command", required=True)

    def world_flags(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--size", type=_pos_float, default=400.0)
        sp.add_argument("--buildings", type=_nonneg_int, default=30)
        sp.add_argument("--kiosks", type=_nonneg_int, default=6)
        sp.add_argument("--targets", type=_nonneg_int, default=8)

    sp = sub.add_parser("gen-world", help="generate a seeded world document")
    world_flags(sp)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_gen_world)

    sp = sub.add_parser("gen-dataset", help="generate paired trajectories and splits")
    world_flags(sp)
    sp.add_argument("--scenes", type=_nonneg_int, default=10)
    sp.add_argument("--pairs", type=_nonneg_int, default=20, help="pairs per scene")
    sp.add_argument("--holdout-scenes", type=_int_csv, default=(0,))
    sp.add_argument("--holdout-categories", type=_csv, default=("fountain",))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("run", help="run episodes over a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--pilot", choices=("oracle", "heuristic"), default="oracle")
    sp.add_argument("--detector", choices=("oracle",), default="oracle")
    sp.add_argument("--map-mode", choices=("stitched", "latest"), default="stitched")
    sp.add_argument("--episodes", type=_nonneg_int, default=50)
    sp.add_argument("--split", default=None)
    sp.add_argument("--time-limit", type=float, default=300.0)
    sp.add_argument("--parallel", type=_nonneg_int, default=1)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("eval", help="metrics table from episode records")
    sp.add_argument("--records")
    sp.add_argument("--check-splits", metavar="MANIFEST")
    sp.add_argument("--success-radius", type=_pos_float, default=20.0)
    sp.add_argument("--out", help="output prefix for .txt and .jsonl reports")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("plot", help="SVG trajectory overlays and probability heatmaps")
    sp.add_argument("--records", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> list:
    """Re-parse with config-file values as defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    values = read_config(known.config)
    first = parser.parse_args(argv)
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[first.command]
    extra = []
    for action in sp._actions:
        if action.dest in values and not any(o in argv for o in action.option_strings):
            extra += [action.option_strings[-1], values[action.dest]]
    unknown = set(values) - {a.dest for a in sp._actions}
    if unknown:
        raise ConfigError(f"unknown config keys for {first.command}: {sorted(unknown)}")
    return list(argv) + extra


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, OSError, FileNotFoundError) as exc:
        code = 2 if isinstance(exc, ConfigError) else 1
        print(f"duonav: error: {exc}", file=sys.stderr)
        return code
    except (DuoNavError, ValueError, GenerationError) as exc:
        print(f"duonav: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
