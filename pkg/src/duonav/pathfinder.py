"""Low-altitude planning and control: occupancy, A*, waypoints, reactive steering."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import AltitudeOrderError, ContractError, InvalidStartError
from .grid import GridFrame
from .orthomap import GlobalDepthMap
from .world import SensorConfig, UAVState, WorldModel, segment_clear

Cell = tuple[int, int]


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Binary traversability: 1 = free at the low flight altitude."""

    cells: np.ndarray
    frame: GridFrame
    delta_z: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.cells)
        if c.shape != self.frame.shape:
            raise ValueError(f"cells shape {c.shape} does not match frame {self.frame.shape}")
        if c.size and not np.isin(c, (0, 1)).all():
            raise ValueError("occupancy cells must be binary")
        object.__setattr__(self, "cells", c.astype(np.uint8))

    def free(self, cell: Cell) -> bool:
        i, j = cell
        return self.frame.contains_cell(i, j) and bool(self.cells[i, j])


def occupancy_from_depth(depth: GlobalDepthMap, delta_z: float) -> OccupancyGrid:
    """Unit step of ``depth - delta_z``: free where the surface is at or below the low plane."""
    if not delta_z > 0:
        raise AltitudeOrderError(f"altitude difference must be positive, got {delta_z}")
    with np.errstate(invalid="ignore"):
        free = depth.valid & (depth.depth - delta_z >= 0)
    return OccupancyGrid(free.astype(np.uint8), depth.frame, float(delta_z))


def erode(occ: OccupancyGrid, radius_cells: int) -> OccupancyGrid:
    """Square-element erosion of the free region; outside the frame counts as blocked."""
    if radius_cells < 0:
        raise ValueError("radius_cells must be >= 0")
    if radius_cells == 0 or occ.cells.size == 0:
        return OccupancyGrid(occ.cells.copy(), occ.frame, occ.delta_z)
    k = 2 * radius_cells + 1
    out = ndimage.binary_erosion(occ.cells.astype(bool), structure=np.ones((k, k), dtype=bool),
                                 border_value=0)
    return OccupancyGrid(out.astype(np.uint8), occ.frame, occ.delta_z)


def default_erosion_radius(collision_radius: float, cell_size: float) -> int:
    return int(math.ceil(collision_radius / cell_size)) + 1


def astar(occ: OccupancyGrid, start: Cell, goal: Cell) -> list[Cell]:
    """4-connected unit-cost A* with the Manhattan heuristic.

    If the goal is blocked or unreachable, the path ends at the reachable free
    cell with the smallest Manhattan distance to the goal (lowest row, then
    lowest column on ties).
    """
    nx, ny = occ.frame.shape
    si, sj = start
    gi, gj = goal
    if not occ.free(start):
        raise InvalidStartError(f"start cell {start} is blocked or outside the grid")
    if not occ.frame.contains_cell(gi, gj):
        raise ContractError(f"goal cell {goal} lies outside the grid")
    free = occ.cells.ravel()
    s = si * ny + sj
    g = gi * ny + gj
    goal_free = bool(free[g])
    gscore = {s: 0}
    parent = {s: -1}
    closed = set()
    h0 = abs(si - gi) + abs(sj - gj)
    heap = [(h0, h0, s)]
    best = (h0, si, sj, s)
    reached = -1
    while heap:
        _f, h, u = heapq.heappop(heap)
        if u in closed:
            continue
        closed.add(u)
        ui, uj = divmod(u, ny)
        if (h, ui, uj) < best[:3]:
            best = (h, ui, uj, u)
        if u == g:
            reached = u
            break
        gu = gscore[u] + 1
        for vi, vj in ((ui - 1, uj), (ui + 1, uj), (ui, uj - 1), (ui, uj + 1)):
            if vi < 0 or vi >= nx or vj < 0 or vj >= ny:
                continue
            v = vi * ny + vj
            if not free[v] or v in closed:
                continue
            if gu < gscore.get(v, 1 << 60):
                gscore[v] = gu
                parent[v] = u
                hv = abs(vi - gi) + abs(vj - gj)
                heapq.heappush(heap, (gu + hv, hv, v))
    end = reached if (goal_free and reached >= 0) else best[3]
    path = []
    u = end
    while u != -1:
        path.append(divmod(u, ny))
        u = parent[u]
    path.reverse()
    return [(int(i), int(j)) for i, j in path]


def path_to_world(path: Sequence[Cell], frame: GridFrame) -> np.ndarray:
    idx = np.asarray(path, dtype=float).reshape(-1, 2)
    x, y = frame.cell_center(idx[:, 0], idx[:, 1])
    return np.column_stack([x, y])


@dataclass(frozen=True, eq=False)
class WaypointPlan:
    waypoints: np.ndarray
    source_tau: int = 0

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)
        if w.shape[0] < 1:
            raise ValueError("a plan needs at least one waypoint")
        object.__setattr__(self, "waypoints", w)

    @property
    def K(self) -> int:
        return self.waypoints.shape[0]


def _polyline_points(pts: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    out = []
    for f in fractions:
        s = total * f
        k = int(np.searchsorted(cum, s, side="right") - 1)
        k = min(max(k, 0), len(seg) - 1)
        t = 0.0 if seg[k] == 0 else (s - cum[k]) / seg[k]
        out.append(pts[k] + min(max(t, 0.0), 1.0) * (pts[k + 1] - pts[k]))
    return np.array(out)


def chord_free(occ: OccupancyGrid, a, b, step_frac: float = 0.125) -> bool:
    """Dense sampling test that the straight segment ``a -> b`` stays on free cells."""
    a = np.asarray(a, dtype=float)[:2]
    b = np.asarray(b, dtype=float)[:2]
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / (occ.frame.cell_size * step_frac))))
    t = np.linspace(0.0, 1.0, n + 1)
    pts = a[None] + t[:, None] * (b - a)[None]
    u, v = occ.frame.to_fractional(pts[:, 0], pts[:, 1])
    i = np.floor(u).astype(int)
    j = np.floor(v).astype(int)
    inside = (i >= 0) & (i < occ.frame.nx) & (j >= 0) & (j < occ.frame.ny)
    if not inside.all():
        return False
    return bool(occ.cells[i, j].all())


def segment(path: Sequence[Cell], frame: GridFrame, spacing: float, z_l: float,
            occ: OccupancyGrid | None = None, source_tau: int = 0) -> WaypointPlan:
    """Split a cell path into ``K = max(1, ceil(length / spacing))`` equal arc-length waypoints.

    When ``occ`` is given, ``K`` is raised until every chord between
    consecutive waypoints (and from the path start to the first one) stays on
    free cells of ``occ``.
    """
    if not path:
        raise ValueError("path must be nonempty")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    xy = path_to_world(path, frame)
    if xy.shape[0] == 1:
        return WaypointPlan(np.array([[xy[0, 0], xy[0, 1], z_l]]), source_tau)
    length = float(np.linalg.norm(np.diff(xy, axis=0), axis=1).sum())
    k = max(1, int(math.ceil(length / spacing - 1e-9)))
    k_max = xy.shape[0] - 1
    while True:
        pts = _polyline_points(xy, np.arange(1, k + 1) / k)
        pts[-1] = xy[-1]
        if occ is None or k >= k_max:
            break
        chain = np.vstack([xy[:1], pts])
        if all(chord_free(occ, chain[m], chain[m + 1]) for m in range(k)):
            break
        k = min(k_max, 2 * k)
    if k >= k_max and occ is not None:
        pts = xy[1:].copy()
    z = np.full((pts.shape[0], 1), float(z_l))
    return WaypointPlan(np.hstack([pts, z]), source_tau)


# ---------------------------------------------------------------- ray scan

@dataclass(frozen=True, eq=False)
class RayScan:
    """Per-bin minimum ranges; bins are body-frame (azimuth, elevation) cells."""

    ranges: np.ndarray
    normalized: np.ndarray
    yaw: float
    max_range: float
    azimuths: np.ndarray
    elevations: np.ndarray

    def bin_directions(self) -> np.ndarray:
        """World-frame unit vectors of bin centers, shape ``(A, E, 3)``."""
        az = self.azimuths[:, None] + self.yaw
        el = self.elevations[None, :]
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                         np.sin(el) * np.ones_like(az)], axis=-1)


def encode_rays(cloud: np.ndarray, state: UAVState, cfg: SensorConfig) -> RayScan:
    """Bin a point cloud by (azimuth, elevation) relative to the vehicle heading."""
    az_c = cfg.ray_azimuths()
    el_c = cfg.ray_elevations()
    A, E = az_c.size, el_c.size
    rmax = float(cfg.lidar_max_range)
    ranges = np.full((A, E), rmax)
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if pts.shape[0]:
        rel = pts - state.pos[None, :]
        r = np.linalg.norm(rel, axis=1)
        keep = r > 0
        rel, r = rel[keep], r[keep]
        az = np.mod(np.arctan2(rel[:, 1], rel[:, 0]) - state.yaw, 2 * math.pi)
        k = np.mod(np.rint(az / (2 * math.pi / A)).astype(int), A)
        el = np.arcsin(np.clip(rel[:, 2] / r, -1.0, 1.0))
        half = (el_c[1] - el_c[0]) / 2 if E > 1 else math.pi
        e = np.abs(el[:, None] - el_c[None, :]).argmin(axis=1)
        inband = np.abs(el - el_c[e]) <= half + 1e-12
        np.minimum.at(ranges, (k[inband], e[inband]), np.minimum(r[inband], rmax))
    return RayScan(ranges, ranges / rmax, float(state.yaw), rmax, az_c, el_c)


@dataclass(frozen=True)
class NavigatorConfig:
    v_max: float = 5.0
    k_attract: float = 5.0
    k_repulse: float = 12.0
    k_damp: float = 0.2
    r_safe: float = 4.0
    arrival_eps: float = 0.25


@dataclass(frozen=True)
class NavCommand:
    velocity: tuple[float, float, float]

    @property
    def vec(self) -> np.ndarray:
        return np.array(self.velocity)


def navigate_step(scan: RayScan, subgoal, pos, vel, cfg: NavigatorConfig | None = None,
                  prev_command=None) -> NavCommand:
    """Reactive velocity command: attraction + repulsion + damping, clipped to ``v_max``."""
    cfg = cfg or NavigatorConfig()
    subgoal = np.asarray(subgoal, dtype=float)
    pos = np.asarray(pos, dtype=float)
    vel = np.asarray(vel, dtype=float)
    prev = vel if prev_command is None else np.asarray(prev_command, dtype=float)
    to_goal = subgoal - pos
    dist = float(np.linalg.norm(to_goal))
    if dist < cfg.arrival_eps:
        return NavCommand((0.0, 0.0, 0.0))
    cmd = cfg.k_attract * to_goal / dist
    close = scan.ranges < cfg.r_safe
    if close.any():
        r = np.maximum(scan.ranges[close], 1e-3)
        w = cfg.k_repulse * (1.0 / r - 1.0 / cfg.r_safe)
        cmd = cmd - (w[:, None] * scan.bin_directions()[close]).sum(axis=0)
    cmd = cmd - cfg.k_damp * (vel - prev)
    n = float(np.linalg.norm(cmd))
    if n > cfg.v_max:
        cmd = cmd * (cfg.v_max / n)
    return NavCommand(tuple(float(c) for c in cmd))


# ---------------------------------------------------------------- detection

@dataclass(frozen=True)
class Detection:
    target_id: int
    confidence: float
    bearing: float
    range: float


def detect_target(world: WorldModel, state: UAVState, instruction, cfg: SensorConfig,
                  target_id: int | None = None) -> Detection | None:
    """Ground-truth detector over the forward camera cone.

    A target is reported when its category matches the instruction, it is in
    the azimuth sector of half-angle ``forward_fov / 2`` about the heading, within
    ``forward_range``, and the line of sight is clear.  The nearest qualifying
    target wins.
    """
    half = cfg.forward_fov / 2
    best = None
    for t in world.targets:
        if t.category != instruction.target_category:
            continue
        if target_id is not None and t.id != target_id:
            continue
        rel = np.asarray(t.position) - state.pos
        rng = float(np.linalg.norm(rel))
        if rng > cfg.forward_range:
            continue
        if rel[0] or rel[1]:
            off = math.atan2(rel[1], rel[0]) - state.yaw
            if abs(math.atan2(math.sin(off), math.cos(off))) > half + 1e-12:
                continue
        if not segment_clear(world, state.pos, t.position):
            continue
        if best is None or rng < best.range:
            conf = min(max(1.0 - rng / cfg.forward_range, 0.0), 1.0)
            best = Detection(t.id, conf, math.atan2(rel[1], rel[0]), rng)
    return best
