"""Paired high/low expert trajectories, templated instructions and evaluation splits."""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GenerationError
from .formats import dumps_traj
from .grid import GridFrame
from .pathfinder import OccupancyGrid, astar, default_erosion_radius, erode, path_to_world
from .pilot import Instruction, sector_of
from .world import Target, UAVState, WorldModel, dumps_world, surface_heights

BANNED_ROUTE_WORDS = ("turn", "left", "right", "straight", "then", "after", "meters", "metres",
                      "step", "waypoint", "proceed", "continue")

_CONTEXT_PHRASES = {
    "near_kiosk": ("close to a small kiosk", ("kiosk",)),
    "near_building": ("next to a building", ("building",)),
    "near_tall_building": ("beside a tall building", ("tall_building",)),
    "open_plaza": ("standing in an open plaza", ()),
}

_TEMPLATES = (
    "Find the {attr}{cat} located to the {sector} of where you start, {ctx}.",
    "Search for a {attr}{cat} somewhere {sector} of your starting area, {ctx}.",
    "Your goal is the {attr}{cat} lying {sector} of the start, {ctx}.",
    "Locate a {attr}{cat} out to the {sector}, {ctx}.",
)


class SkipPair(Exception):
    """Raised by the low-path generator when a (start, target) pair is unusable."""


@dataclass(frozen=True)
class DatasetParams:
    pairs_per_scene: int = 20
    z_l_band: tuple[float, float] = (8.0, 12.0)
    clearance: float = 2.0
    collision_radius: float = 1.0
    plan_cell: float = 2.0
    success_radius: float = 20.0
    standoff: float = 0.75
    high_margin: float = 10.0
    cruise_speed: float = 5.0
    start_distance: tuple[float, float] = (60.0, 200.0)
    high_step: float = 50.0
    z_h_band: tuple[float, float] = (60.0, 200.0)
    z_h_raise: float = 20.0
    high_retries: int = 40
    bev_fov: float = math.pi / 2
    strict_time_window: bool = False
    time_window: int = 3
    unseen_map_scenes: tuple[int, ...] = ()
    unseen_object_categories: tuple[str, ...] = ()
    max_start_attempts: int = 200

    def validate(self) -> None:
        if self.pairs_per_scene < 0:
            raise ConfigError("pairs_per_scene must be >= 0")
        if not 0 < self.z_l_band[0] <= self.z_l_band[1]:
            raise ConfigError("z_l_band must satisfy 0 < lo <= hi")
        if not 0 < self.z_h_band[0] <= self.z_h_band[1]:
            raise ConfigError("z_h_band must satisfy 0 < lo <= hi")
        if not (self.plan_cell > 0 and self.cruise_speed > 0 and self.high_step > 0):
            raise ConfigError("plan_cell, cruise_speed and high_step must be positive")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class TrajectoryPair:
    pair_id: str
    scene_id: int
    category: str
    low_path: np.ndarray
    high_path: np.ndarray
    instruction: Instruction
    target: tuple[float, float, float]
    target_id: int
    high_altitude: float

    @property
    def expert_length(self) -> float:
        return polyline_length(self.low_path)

    def expert_time(self, cruise_speed: float) -> float:
        return self.expert_length / cruise_speed


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    pairs: tuple[TrajectoryPair, ...]
    splits: dict[str, tuple[str, ...]]
    seed: int
    params: DatasetParams
    worlds: tuple[WorldModel, ...] = ()
    skipped: int = 0

    def split_of(self, pair_id: str) -> str:
        for name, ids in self.splits.items():
            if pair_id in ids:
                return name
        raise KeyError(pair_id)

    def records(self) -> list[dict]:
        out = []
        for p in self.pairs:
            out.append({
                "pair_id": p.pair_id, "scene_id": p.scene_id, "category": p.category,
                "split": self.split_of(p.pair_id),
                "T_star": p.expert_time(self.params.cruise_speed), "L_star": p.expert_length,
                "target": list(p.target), "target_id": p.target_id,
                "start": [float(v) for v in p.low_path[0]], "z_h": p.high_altitude,
                "instruction": asdict(p.instruction),
                "low_traj": f"traj/{p.pair_id}_low.traj", "high_traj": f"traj/{p.pair_id}_high.traj",
                "world": f"worlds/scene_{p.scene_id}.world",
            })
        return out

    def header(self) -> str:
        return f"MANIFEST v1 seed={self.seed} params={self.params.digest()}"

    def dumps(self) -> str:
        lines = [self.header()]
        lines.extend(json.dumps(r, sort_keys=True) for r in self.records())
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self, outdir) -> str:
        """Write the manifest, world documents and trajectory dumps; returns the manifest path."""
        os.makedirs(os.path.join(outdir, "traj"), exist_ok=True)
        os.makedirs(os.path.join(outdir, "worlds"), exist_ok=True)
        for k, w in enumerate(self.worlds):
            with open(os.path.join(outdir, "worlds", f"scene_{k}.world"), "w", encoding="utf-8") as fh:
                fh.write(dumps_world(w))
        for p in self.pairs:
            for tag, path in (("low", p.low_path), ("high", p.high_path)):
                t = path_times(path, self.params.cruise_speed)
                with open(os.path.join(outdir, "traj", f"{p.pair_id}_{tag}.traj"), "w", encoding="utf-8") as fh:
                    fh.write(dumps_traj(t, path))
        mpath = os.path.join(outdir, "manifest.jsonl")
        with open(mpath, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())
        return mpath


def load_manifest(path) -> tuple[dict, list[dict]]:
    """Header fields and records of a saved manifest."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("MANIFEST v1"):
        raise ValueError("missing 'MANIFEST v1' header")
    head = dict(kv.split("=", 1) for kv in lines[0].split()[2:])
    return head, [json.loads(ln) for ln in lines[1:]]


def polyline_length(path) -> float:
    p = np.asarray(path, dtype=float)
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) if len(p) > 1 else 0.0


def path_times(path, speed: float) -> np.ndarray:
    p = np.asarray(path, dtype=float)
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1) if len(p) > 1 else np.zeros(0)
    return np.concatenate([[0.0], np.cumsum(seg)]) / speed


# ---------------------------------------------------------------- low path

def truth_occupancy(world: WorldModel, z_l: float, cell: float, clearance: float) -> OccupancyGrid:
    """Conservative raster: a cell is blocked if any solid reaching ``z_l - clearance`` touches it."""
    xmin, xmax, ymin, ymax, _ = world.bounds
    nx = int(math.floor((xmax - xmin) / cell))
    ny = int(math.floor((ymax - ymin) / cell))
    frame = GridFrame(xmin, ymin, cell, nx, ny)
    limit = z_l - clearance
    blocked = np.zeros(frame.shape, dtype=bool)
    lo, hi = world._solids
    for (bx0, by0, _), (bx1, by1, top) in zip(lo, hi):
        if top < limit:
            continue
        i0 = max(0, int(math.floor((bx0 - xmin) / cell)))
        i1 = min(nx - 1, int(math.floor((bx1 - xmin) / cell)))
        j0 = max(0, int(math.floor((by0 - ymin) / cell)))
        j1 = min(ny - 1, int(math.floor((by1 - ymin) / cell)))
        if i0 <= i1 and j0 <= j1:
            blocked[i0:i1 + 1, j0:j1 + 1] = True
    if world.ground_level >= limit:
        blocked[:] = True
    return OccupancyGrid((~blocked).astype(np.uint8), frame)


def _compress(xy: np.ndarray) -> np.ndarray:
    """Drop interior vertices lying on a straight run; length is unchanged."""
    if len(xy) <= 2:
        return xy
    keep = [0]
    for k in range(1, len(xy) - 1):
        a, b, c = xy[keep[-1]], xy[k], xy[k + 1]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) > 1e-9:
            keep.append(k)
    keep.append(len(xy) - 1)
    return xy[keep]


def gen_low_traj(world: WorldModel, start: Sequence[float], target: Sequence[float],
                 params: DatasetParams | None = None) -> np.ndarray:
    """Expert low-altitude polyline from ``start`` (at its altitude) to within ``d`` of ``target``.

    Raises :class:`SkipPair` when the start is blocked or no cell within the
    success radius is reachable.
    """
    params = params or DatasetParams()
    z_l = float(start[2])
    occ = truth_occupancy(world, z_l, params.plan_cell, params.clearance)
    r = default_erosion_radius(params.collision_radius, params.plan_cell)
    free = erode(occ, r)
    frame = free.frame
    s = frame.cell_of(start[0], start[1])
    if not free.free(s):
        raise SkipPair("start cell is not free")
    cx, cy = frame.centers()
    d3 = np.sqrt((cx - target[0]) ** 2 + (cy - target[1]) ** 2 + (z_l - target[2]) ** 2)
    candidates = (free.cells == 1) & (d3 <= params.success_radius)
    if not candidates.any():
        raise SkipPair("no free cell within the success radius")
    lab, _ = ndimage.label(free.cells.astype(bool))
    reach = candidates & (lab == lab[s])
    if not reach.any():
        raise SkipPair("target region unreachable")
    dd = np.where(reach, d3, np.inf)
    g = np.unravel_index(int(np.argmin(dd)), dd.shape)
    path = astar(free, s, (int(g[0]), int(g[1])))
    # stop at a stand-off so the target stays inside the forward camera cone
    for k, (i, j) in enumerate(path):
        if d3[i, j] <= params.standoff * params.success_radius:
            path = path[:k + 1]
            break
    xy = path_to_world(path, frame)
    xy[0] = (float(start[0]), float(start[1]))
    xy = _compress(xy)
    return np.column_stack([xy, np.full(len(xy), z_l)])


# ---------------------------------------------------------------- high path

def footprint_half(z: float, fov: float) -> float:
    return z * math.tan(fov / 2)


def covered(low_path: np.ndarray, high_path: np.ndarray, fov: float,
            strict_window: int | None = None) -> np.ndarray:
    """Per low vertex: inside the square footprint of some (time-aligned if strict) high vertex."""
    low = np.asarray(low_path, dtype=float)[:, :2]
    high = np.asarray(high_path, dtype=float)
    half = high[:, 2] * math.tan(fov / 2)
    inside = (np.abs(low[:, None, 0] - high[None, :, 0]) <= half[None]) & \
             (np.abs(low[:, None, 1] - high[None, :, 1]) <= half[None])
    if strict_window is not None:
        n, m = inside.shape
        pos = np.arange(n) * (m - 1) / max(n - 1, 1)
        allowed = np.abs(pos[:, None] - np.arange(m)[None]) <= strict_window
        inside &= allowed
    return inside.any(axis=1)


def gen_high_traj(low_path: np.ndarray, world: WorldModel, seed, params: DatasetParams | None = None) -> np.ndarray:
    """Random-walk high polyline whose footprints cover every low vertex (rejection sampling)."""
    params = params or DatasetParams()
    low = np.asarray(low_path, dtype=float).reshape(-1, 3)
    if low.shape[0] == 0:
        raise ValueError("low_path must be nonempty")
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax, _ = world.bounds
    window = params.time_window if params.strict_time_window else None
    _, hi = world._solids
    tallest = float(hi[:, 2].max()) if len(hi) else world.ground_level
    z = max(params.z_h_band[0], math.ceil(tallest + params.high_margin))
    n_steps = max(1, int(math.ceil(polyline_length(low) / params.high_step)) + 1)
    while z <= params.z_h_band[1] + 1e-9:
        for _ in range(params.high_retries):
            pts = [np.array([low[0, 0], low[0, 1]])]
            for k in range(n_steps):
                frac = min(1.0, (k + 1) / n_steps)
                aim = low[min(len(low) - 1, int(round(frac * (len(low) - 1)))), :2]
                d = aim - pts[-1]
                dist = float(np.hypot(*d))
                ang = (math.atan2(d[1], d[0]) if dist > 0 else 0.0) + rng.normal(0.0, 0.5)
                step = min(params.high_step, dist + rng.uniform(0.0, 10.0)) * rng.uniform(0.6, 1.0)
                nxt = pts[-1] + step * np.array([math.cos(ang), math.sin(ang)])
                pts.append(np.clip(nxt, (xmin, ymin), (xmax, ymax)))
            high = np.column_stack([np.array(pts), np.full(len(pts), z)])
            if covered(low, high, params.bev_fov, window).all():
                return high
        z += params.z_h_raise
    raise GenerationError("coverage constraint unsatisfiable within the altitude band")


# ---------------------------------------------------------------- instructions

def make_instruction(world: WorldModel, target: Target, start: Sequence[float], seed=0) -> Instruction:
    """Templated instruction: category, compass sector from the start, attributes, context."""
    rng = np.random.default_rng(seed)
    sector = sector_of(target.position[0] - start[0], target.position[1] - start[1])
    attrs = tuple(target.attributes)
    ctx_phrases, surroundings = [], []
    for tag in target.context:
        phrase, tags = _CONTEXT_PHRASES.get(tag, (tag.replace("_", " "), ()))
        ctx_phrases.append(phrase)
        surroundings.extend(tags)
    ctx = " and ".join(ctx_phrases) if ctx_phrases else "somewhere in the area"
    template = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))]
    text = template.format(attr="".join(a + " " for a in attrs), cat=target.category.replace("_", " "),
                           sector=sector, ctx=ctx)
    return Instruction(target.category, sector, attrs, tuple(surroundings), text)


# ---------------------------------------------------------------- assembly

def _sample_start(world: WorldModel, target: Target, z_l: float, rng, params: DatasetParams):
    xmin, xmax, ymin, ymax, _ = world.bounds
    margin = 10.0
    r = params.collision_radius + params.clearance
    for _ in range(params.max_start_attempts):
        dist = rng.uniform(*params.start_distance)
        ang = rng.uniform(-math.pi, math.pi)
        x = target.position[0] + dist * math.cos(ang)
        y = target.position[1] + dist * math.sin(ang)
        if not (xmin + margin <= x <= xmax - margin and ymin + margin <= y <= ymax - margin):
            continue
        xs = x + np.array([0, r, -r, 0, 0, r, r, -r, -r])
        ys = y + np.array([0, 0, 0, r, -r, r, -r, r, -r])
        if float(surface_heights(world, xs, ys).max()) >= z_l - params.clearance:
            continue
        return (round(float(x), 3), round(float(y), 3), z_l)
    return None


def generate_pair(world: WorldModel, scene_id: int, index: int, seed: int,
                  params: DatasetParams) -> TrajectoryPair | None:
    """One pair for task ``(scene_id, index)``; ``None`` if this task is skipped."""
    rng = np.random.default_rng([seed, scene_id, index])
    if not world.targets:
        return None
    target = world.targets[index % len(world.targets)]
    z_l = round(float(rng.uniform(*params.z_l_band)), 2)
    start = _sample_start(world, target, z_l, rng, params)
    if start is None:
        return None
    try:
        low = gen_low_traj(world, start, target.position, params)
    except SkipPair:
        return None
    high = gen_high_traj(low, world, [seed, scene_id, index, 1], params)
    inst = make_instruction(world, target, start, seed=[seed, scene_id, index, 2])
    return TrajectoryPair(f"s{scene_id:03d}_p{index:04d}", scene_id, target.category, low, high, inst,
                          tuple(target.position), target.id, float(high[0, 2]))


def build_dataset(worlds: Sequence[WorldModel], params: DatasetParams | None = None, seed: int = 0,
                  categories: Sequence[str] | None = None) -> DatasetManifest:
    """Generate ``pairs_per_scene`` pairs per world and assign the three splits.

    Pairs in held-out scenes form ``unseen_map``; remaining pairs whose
    category is held out form ``unseen_object``; everything else is ``train``.
    Skipped tasks are retried with fresh indices so each scene yields the
    requested count when feasible.
    """
    params = params or DatasetParams()
    params.validate()
    if len(worlds) < 3:
        raise ConfigError("at least 3 scenes are required")
    if categories is None:
        categories = sorted({t.category for w in worlds for t in w.targets})
    if len(set(categories)) < 2:
        raise ConfigError("at least 2 categories are required")
    if any(s < 0 or s >= len(worlds) for s in params.unseen_map_scenes):
        raise ConfigError("held-out scene id out of range")
    if len(set(params.unseen_map_scenes)) >= len(worlds):
        raise ConfigError("cannot hold out every scene")
    if set(categories) <= set(params.unseen_object_categories):
        raise ConfigError("cannot hold out every category")

    pairs: list[TrajectoryPair] = []
    skipped = 0
    for sid, world in enumerate(worlds):
        got, idx = 0, 0
        while got < params.pairs_per_scene and idx < params.pairs_per_scene * 20:
            pair = generate_pair(world, sid, idx, seed, params)
            idx += 1
            if pair is None:
                skipped += 1
                continue
            pairs.append(pair)
            got += 1
    splits: dict[str, list[str]] = {"train": [], "unseen_map": [], "unseen_object": []}
    for p in pairs:
        if p.scene_id in params.unseen_map_scenes:
            splits["unseen_map"].append(p.pair_id)
        elif p.category in params.unseen_object_categories:
            splits["unseen_object"].append(p.pair_id)
        else:
            splits["train"].append(p.pair_id)
    return DatasetManifest(tuple(pairs), {k: tuple(v) for k, v in splits.items()}, seed, params,
                           tuple(worlds), skipped)


def episode_spec(pair: TrajectoryPair, world: WorldModel, params: DatasetParams | None = None,
                 time_limit: float = 300.0, tick: float = 0.1):
    """Episode specification for a pair: both UAVs start above the low path's first vertex."""
    from .episode import EpisodeSpec
    params = params or DatasetParams()
    sx, sy, sz = (float(v) for v in pair.low_path[0])
    return EpisodeSpec(world, pair.instruction, UAVState((sx, sy, sz)), UAVState((sx, sy, pair.high_altitude)),
                       pair.target, params.success_radius, time_limit, tick,
                       expert_time=pair.expert_time(params.cruise_speed), expert_length=pair.expert_length,
                       episode_id=pair.pair_id)
