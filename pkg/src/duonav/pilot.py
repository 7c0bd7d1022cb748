"""High-altitude decisions: target probability maps and high-UAV motion targets.

The learned pilot is replaced by two policies sharing one interface: an oracle
that builds ground-truth maps from an expert path, and a heuristic that scores
map cells against the instruction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .errors import ContractError, DegenerateMapError
from .grid import GridFrame
from .orthomap import GlobalDepthMap, OrthoMap
from .pathfinder import OccupancyGrid

SECTORS = ("east", "northeast", "north", "northwest", "west", "southwest", "south", "southeast")


def sector_of(dx: float, dy: float) -> str:
    """Compass sector (45 degrees wide) of a displacement; east is +x."""
    ang = math.atan2(dy, dx)
    return SECTORS[int(round(ang / (math.pi / 4))) % 8]


@dataclass(frozen=True)
class Instruction:
    target_category: str
    direction_hint: str | None = None
    attribute_tags: tuple[str, ...] = ()
    surroundings_tags: tuple[str, ...] = ()
    text: str = ""

    def __post_init__(self):
        if not self.target_category:
            raise ValueError("target_category must be nonempty")
        if self.direction_hint is not None and self.direction_hint not in SECTORS:
            raise ValueError(f"unknown direction hint {self.direction_hint!r}")


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    prob: np.ndarray
    frame: GridFrame

    def check(self, suppressed: np.ndarray | None = None, tol: float = 1e-9) -> None:
        """Raise ``ContractError`` unless the map is a valid distribution."""
        if np.any(self.prob < 0) or not np.all(np.isfinite(self.prob)):
            raise ContractError("probabilities must be finite and non-negative")
        if abs(float(self.prob.sum()) - 1.0) > tol:
            raise ContractError(f"probabilities sum to {self.prob.sum()}, not 1")
        if suppressed is not None and np.any(self.prob[suppressed] != 0):
            raise ContractError("suppressed cells carry probability mass")


@dataclass(frozen=True, eq=False)
class PilotDecision:
    prob_map: ProbabilityMap
    high_heading: float
    high_step: float
    centroid: tuple[float, float] = (0.0, 0.0)
    fallback: bool = False

    def __post_init__(self):
        if self.high_step < 0:
            raise ValueError("high_step must be >= 0")

    def log_line(self, tau: int) -> str:
        return (f"{tau} {self.high_heading!r} {self.high_step!r} "
                f"{self.centroid[0]!r} {self.centroid[1]!r}")


class PilotPolicy(Protocol):
    def decide(self, ortho: OrthoMap, depth: GlobalDepthMap, history: Sequence[Sequence[float]],
               instruction: Instruction, *, occ: OccupancyGrid, low_position: Sequence[float]) -> PilotDecision:
        ...


def _normalize_suppressed(weights: np.ndarray, free: np.ndarray, frame: GridFrame) -> ProbabilityMap:
    w = np.where(free, weights, 0.0)
    total = float(w.sum())
    if not total > 0 or not math.isfinite(total):
        raise DegenerateMapError("no probability mass left after suppression")
    return ProbabilityMap(w / total, frame)


def oracle_gaussian_map(center: Sequence[float], frame: GridFrame, occ: OccupancyGrid,
                        sigma: float) -> ProbabilityMap:
    """Isotropic Gaussian label map over free cells, normalised to unit mass.

    A center outside the frame is replaced by the nearest in-frame cell
    center.  Densities are evaluated relative to the nearest free cell, so
    the map never underflows while any free cell exists.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if occ.frame.shape != frame.shape:
        raise ContractError("occupancy grid is not aligned with the map frame")
    u, v = (float(c) for c in frame.to_fractional(center[0], center[1]))
    if not (0 <= u < frame.nx and 0 <= v < frame.ny):
        i = min(max(int(math.floor(u)), 0), frame.nx - 1)
        j = min(max(int(math.floor(v)), 0), frame.ny - 1)
        u, v = i + 0.5, j + 0.5
    free = occ.cells.astype(bool)
    if not free.any():
        raise DegenerateMapError("map has no free cell")
    di = (np.arange(frame.nx) + 0.5) - u
    dj = (np.arange(frame.ny) + 0.5) - v
    d2 = di[:, None] ** 2 + dj[None, :] ** 2
    s2 = (sigma / frame.cell_size) ** 2
    logw = -d2 / (2.0 * s2)
    logw = np.where(free, logw - logw[free].max(), -np.inf)
    return _normalize_suppressed(np.exp(logw), free, frame)


def uniform_over_free(occ: OccupancyGrid) -> ProbabilityMap:
    return _normalize_suppressed(np.ones(occ.frame.shape), occ.cells.astype(bool), occ.frame)


def centroid(pmap: ProbabilityMap) -> tuple[float, float]:
    """Probability-weighted mean of the index pair ``(i, j)``."""
    p = pmap.prob
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6:
        raise ContractError(f"probability map is not normalised (sum={total})")
    ii = np.arange(p.shape[0], dtype=float)
    jj = np.arange(p.shape[1], dtype=float)
    return float(p.sum(axis=1) @ ii), float(p.sum(axis=0) @ jj)


def map_to_global(xc: float, yc: float, frame: GridFrame, z_l: float) -> tuple[float, float, float]:
    return (frame.x0 + (xc + 0.5) * frame.cell_size, frame.y0 + (yc + 0.5) * frame.cell_size, float(z_l))


def global_to_map(x: float, y: float, frame: GridFrame) -> tuple[float, float]:
    """Inverse of :func:`map_to_global` in fractional grid coordinates."""
    return (x - frame.x0) / frame.cell_size - 0.5, (y - frame.y0) / frame.cell_size - 0.5


def high_motion(high_xy: Sequence[float], goal_xy: Sequence[float], step_limit: float) -> tuple[float, float]:
    """Heading toward ``goal_xy`` and a step clamped to ``step_limit``."""
    dx, dy = goal_xy[0] - high_xy[0], goal_xy[1] - high_xy[1]
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0, 0.0
    return math.atan2(dy, dx), min(step_limit, dist)


def _polyline_progress(path: np.ndarray, p: Sequence[float]) -> float:
    """Arc length at the point of ``path`` nearest to ``p`` (horizontal)."""
    best_d, best_s, s0 = math.inf, 0.0, 0.0
    q = np.asarray(p[:2], dtype=float)
    for a, b in zip(path[:-1, :2], path[1:, :2]):
        ab = b - a
        L = float(np.hypot(*ab))
        t = 0.0 if L == 0 else min(max(float((q - a) @ ab) / (L * L), 0.0), 1.0)
        d = float(np.hypot(*(a + t * ab - q)))
        if d < best_d:
            best_d, best_s = d, s0 + t * L
        s0 += L
    return best_s


def point_at_arclength(path: np.ndarray, s: float) -> np.ndarray:
    path = np.asarray(path, dtype=float)
    if path.shape[0] == 1:
        return path[0].copy()
    seg = np.linalg.norm(np.diff(path[:, :2], axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = min(max(s, 0.0), cum[-1])
    k = min(int(np.searchsorted(cum, s, side="right") - 1), len(seg) - 1)
    t = 0.0 if seg[k] == 0 else (s - cum[k]) / seg[k]
    return path[k] + t * (path[k + 1] - path[k])


@dataclass
class OraclePilot:
    """Ground-truth pilot: Gaussian label centred on the expert path ahead of the low UAV."""

    expert_path: np.ndarray
    lookahead: float = 50.0
    sigma: float = 10.0
    step_length: float = 50.0

    def __post_init__(self):
        self.expert_path = np.asarray(self.expert_path, dtype=float).reshape(-1, 3)

    def future_point(self, low_position: Sequence[float]) -> np.ndarray:
        s = _polyline_progress(self.expert_path, low_position) if len(self.expert_path) > 1 else 0.0
        return point_at_arclength(self.expert_path, s + self.lookahead)

    def decide(self, ortho, depth, history, instruction, *, occ, low_position) -> PilotDecision:
        goal = self.future_point(low_position)
        pmap = oracle_gaussian_map(goal[:2], ortho.frame, occ, self.sigma)
        return _decision(pmap, history, self.step_length)


def _decision(pmap: ProbabilityMap, history, step_length: float, fallback: bool = False) -> PilotDecision:
    ci, cj = centroid(pmap)
    cx, cy, _ = map_to_global(ci, cj, pmap.frame, 0.0)
    hx, hy = history[-1][0], history[-1][1]
    heading, step = high_motion((hx, hy), (cx, cy), step_length)
    return PilotDecision(pmap, heading, step, (ci, cj), fallback)


def oracle_pilot_decide(future_point: Sequence[float], ortho: OrthoMap, occ: OccupancyGrid,
                        high_position: Sequence[float], sigma: float = 10.0,
                        step_length: float = 50.0) -> PilotDecision:
    """Functional form of :class:`OraclePilot` for an explicit future point."""
    pmap = oracle_gaussian_map(future_point[:2], ortho.frame, occ, sigma)
    return _decision(pmap, [high_position], step_length)


def _within(mask: np.ndarray, radius_cells: float, pad_true: bool = False) -> np.ndarray:
    """Cells whose center lies within ``radius_cells`` of a cell of ``mask``."""
    if pad_true:
        mask = np.pad(mask, 1, constant_values=True)
    if not mask.any():
        out = np.zeros(mask.shape, dtype=bool)
    else:
        out = ndimage.distance_transform_edt(~mask) <= radius_cells
    return out[1:-1, 1:-1] if pad_true else out


@dataclass
class HeuristicPilot:
    """Instruction-matching pilot over the semantic map.

    Each free cell scores ``w_category`` if its label shows the target
    category with every instructed attribute, ``w_direction`` if it lies in the hinted compass sector seen
    from the episode start, ``w_context`` if it is within ``context_radius``
    meters of a label carrying a surroundings tag, and ``w_frontier`` if it is
    within ``frontier_radius`` meters of unobserved space (anything outside the
    map frame counts as unobserved).  The map is a softmax of the scores over
    free cells.
    """

    w_category: float = 12.0
    w_direction: float = 2.0
    w_context: float = 1.0
    w_frontier: float = 2.0
    temperature: float = 0.25
    context_radius: float = 30.0
    frontier_radius: float = 15.0
    step_length: float = 50.0
    label_tags: dict = field(default_factory=dict)

    def scores(self, ortho: OrthoMap, history, instruction: Instruction) -> np.ndarray:
        legend = {**ortho.legend, **self.label_tags}
        sem = ortho.semantic
        cell = ortho.frame.cell_size
        cat_labels = [lab for lab, tags in legend.items() if instruction.target_category in tags
                      and set(instruction.attribute_tags) <= set(tags)]
        ctx_labels = [lab for lab, tags in legend.items()
                      if set(tags) & set(instruction.surroundings_tags)]
        score = np.zeros(sem.shape)
        if cat_labels:
            score += self.w_category * np.isin(sem, cat_labels)
        if instruction.direction_hint is not None and history:
            sx, sy = history[0][0], history[0][1]
            gx, gy = ortho.frame.centers()
            ang = np.arctan2(gy - sy, gx - sx)
            center = SECTORS.index(instruction.direction_hint) * math.pi / 4
            diff = np.abs(np.angle(np.exp(1j * (ang - center))))
            in_sector = (diff <= math.pi / 8) & ((gx != sx) | (gy != sy))
            score += self.w_direction * in_sector
        if ctx_labels and self.w_context:
            score += self.w_context * _within(np.isin(sem, ctx_labels), self.context_radius / cell)
        if self.w_frontier:
            score += self.w_frontier * _within(~ortho.valid, self.frontier_radius / cell, pad_true=True)
        return score

    def decide(self, ortho, depth, history, instruction, *, occ, low_position) -> PilotDecision:
        score = self.scores(ortho, history, instruction)
        free = occ.cells.astype(bool)
        if not free.any():
            raise DegenerateMapError("map has no free cell")
        z = score / self.temperature
        z = np.where(free, z - z[free].max(), -np.inf)
        pmap = _normalize_suppressed(np.exp(z), free, ortho.frame)
        return _decision(pmap, history, self.step_length)
