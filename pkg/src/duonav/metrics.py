"""Navigation metrics over episode outcomes: SR, SPL, SST, OSR and NE (meters)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ContractError, DataError, EmptySetError

COLUMNS = ("SST", "SR", "SPL", "OSR", "NE")


@dataclass(frozen=True)
class EpisodeRow:
    """The per-episode quantities the metrics need."""

    success: bool
    T: float
    T_star: float
    L: float
    L_star: float
    oracle_hit: bool
    ne: float
    episode_id: str = ""
    split: str = "all"

    @classmethod
    def from_record(cls, rec: Mapping) -> "EpisodeRow":
        return cls(rec["outcome"] == "Success", float(rec["T"]), float(rec["T_star"]), float(rec["L"]),
                   float(rec["L_star"]), bool(rec["oracle_hit"]), float(rec["NE"]),
                   str(rec.get("episode_id", "")), str(rec.get("split", "all")))

    @classmethod
    def from_result(cls, result, spec, split: str = "all") -> "EpisodeRow":
        return cls(result.success, result.search_time, spec.expert_time, result.path_length,
                   spec.expert_length, result.oracle_hit, result.navigation_error, spec.episode_id, split)


def _rows(results: Iterable) -> list:
    rows = list(results)
    if not rows:
        raise EmptySetError("metric over an empty episode set")
    return rows


def _s(r) -> float:
    return 1.0 if r.success else 0.0


def sr(results: Iterable) -> float:
    rows = _rows(results)
    return sum(_s(r) for r in rows) / len(rows)


def spl_term(r) -> float:
    if not r.L_star > 0:
        raise DataError(f"nonpositive expert path length {r.L_star}")
    return _s(r) * r.L_star / max(r.L, r.L_star)


def sst_term(r) -> float:
    if not r.T_star > 0:
        raise DataError(f"nonpositive expert time {r.T_star}")
    return _s(r) * r.T_star / max(r.T, r.T_star)


def spl(results: Iterable) -> float:
    rows = _rows(results)
    return sum(spl_term(r) for r in rows) / len(rows)


def sst(results: Iterable) -> float:
    rows = _rows(results)
    return sum(sst_term(r) for r in rows) / len(rows)


def osr(results: Iterable) -> float:
    rows = _rows(results)
    return sum(1.0 for r in rows if r.oracle_hit) / len(rows)


def ne(results: Iterable) -> float:
    rows = _rows(results)
    return sum(r.ne for r in rows) / len(rows)


@dataclass(frozen=True)
class MetricReport:
    SR: float
    SPL: float
    SST: float
    OSR: float
    NE: float
    n_episodes: int
    split: str = "all"
    table: tuple = field(default=(), repr=False)

    def check(self, success_radius: float | None = None) -> None:
        """Raise ``ContractError`` if any aggregate invariant is violated."""
        eps = 1e-12
        for name in ("SR", "SPL", "SST", "OSR"):
            v = getattr(self, name)
            if not -eps <= v <= 1 + eps:
                raise ContractError(f"{name}={v} outside [0, 1]")
        if self.SPL > self.SR + eps or self.SST > self.SR + eps:
            raise ContractError("SPL and SST must not exceed SR")
        if self.OSR < self.SR - eps:
            raise ContractError("OSR must be at least SR")
        for row in self.table:
            if sst_term(row) > _s(row) or spl_term(row) > _s(row):
                raise ContractError(f"per-episode weighted score exceeds success for {row.episode_id}")
            if success_radius is not None and row.success and row.ne > success_radius + 1e-9:
                raise ContractError(f"successful episode {row.episode_id} stopped {row.ne} m away")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in COLUMNS}
        d.update(n_episodes=self.n_episodes, split=self.split, NE_unit="m")
        return d


def report(results: Sequence, split: str = "all") -> MetricReport:
    rows = _rows(results)
    return MetricReport(SR=sr(rows), SPL=spl(rows), SST=sst(rows), OSR=osr(rows), NE=ne(rows),
                        n_episodes=len(rows), split=split, table=tuple(rows))


def reports_by_split(rows: Sequence[EpisodeRow]) -> list[MetricReport]:
    groups: dict[str, list] = {}
    for r in rows:
        groups.setdefault(r.split, []).append(r)
    return [report(groups[k], k) for k in sorted(groups)]


def format_table(reports: Sequence[MetricReport]) -> str:
    """Aligned text table; rates in percent, NE in meters."""
    head = ["split", "n"] + [f"{c}(%)" for c in COLUMNS[:-1]] + ["NE(m)"]
    body = []
    for rep in reports:
        body.append([rep.split, str(rep.n_episodes)] +
                    [f"{100 * getattr(rep, c):.2f}" for c in COLUMNS[:-1]] + [f"{rep.NE:.2f}"])
    widths = [max(len(r[k]) for r in [head] + body) for k in range(len(head))]
    fmt = lambda row: "  ".join(c.rjust(w) if k else c.ljust(w) for k, (c, w) in enumerate(zip(row, widths)))
    return "\n".join([fmt(head)] + [fmt(r) for r in body]) + "\n"


def format_jsonl(reports: Sequence[MetricReport]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in reports)
