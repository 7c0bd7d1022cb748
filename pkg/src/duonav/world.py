"""Procedural 3D city world, sensor models and collision checks.

The world is a static elevation grid plus axis-aligned box obstacles, so every
ray query and occupancy test below is exact.  Targets are ground objects that
appear in the nadir semantic channel but are not solid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import BoundsError, ConfigError, FormatError, GenerationError, StateError
from .grid import GridFrame

LABEL_INVALID = -1
LABEL_GROUND = 0
TARGET_LABEL_BASE = 10000

TARGET_RADIUS = 2.5   # horizontal extent of a target in the semantic channel [m]
TARGET_HEIGHT = 1.0   # target reference point above ground [m]

_RAY_CHUNK = 16384


# ---------------------------------------------------------------- domain types

@dataclass(frozen=True, eq=False)
class ElevationGrid:
    """Gridded ground heights; ``heights[i, j]`` with ``i`` along +x.

    ``valid`` is ``None`` for fully known grids (world terrain) and a boolean
    mask for reconstructed grids, where invalid cells hold NaN.
    """

    heights: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)
    valid: np.ndarray | None = None

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        object.__setattr__(self, "heights", h)
        if h.ndim != 2:
            raise ValueError("heights must be a 2D array")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        known = h if self.valid is None else h[self.valid]
        if not np.all(np.isfinite(known)) or np.any(known < 0):
            raise ValueError("heights must be finite and >= 0 on valid cells")

    @property
    def frame(self) -> GridFrame:
        return GridFrame(float(self.origin[0]), float(self.origin[1]),
                         float(self.cell_size), *self.heights.shape)

    def valid_mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.heights.shape, dtype=bool)
        return self.valid


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned box standing on the datum, footprint ``[x1,x2] x [y1,y2]``."""

    x1: float
    y1: float
    x2: float
    y2: float
    height: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError("obstacle footprint must have positive area")
        if not self.height > 0:
            raise ValueError("obstacle height must be positive")

    @property
    def kind(self) -> str:
        if self.height < 6.0:
            return "kiosk"
        if self.height < 35.0:
            return "building"
        return "tall_building"

    def contains_xy(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2


@dataclass(frozen=True)
class Target:
    id: int
    category: str
    position: tuple[float, float, float]
    tags: tuple[str, ...] = ()

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(t for t in self.tags if not _is_context_tag(t))

    @property
    def context(self) -> tuple[str, ...]:
        return tuple(t for t in self.tags if _is_context_tag(t))


def _is_context_tag(tag: str) -> bool:
    return tag.startswith("near_") or tag == "open_plaza"


@dataclass(frozen=True, eq=False)
class WorldModel:
    terrain: ElevationGrid
    obstacles: tuple[Obstacle, ...] = ()
    targets: tuple[Target, ...] = ()
    z_max: float = 300.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.terrain.valid is not None:
            raise ValueError("world terrain must be fully valid")
        xmin, xmax, ymin, ymax, _ = self.bounds
        for t in self.targets:
            x, y, z = t.position
            if not (xmin <= x <= xmax and ymin <= y <= ymax and 0 <= z <= self.z_max):
                raise ValueError(f"target {t.id} lies outside world bounds")
            for ob in self.obstacles:
                if ob.x1 < x < ob.x2 and ob.y1 < y < ob.y2:
                    raise ValueError(f"target {t.id} lies inside an obstacle")

    @property
    def bounds(self) -> tuple[float, float, float, float, float]:
        f = self.terrain.frame
        return (f.x0, f.x1, f.y0, f.y1, float(self.z_max))

    def in_bounds_xy(self, x, y):
        xmin, xmax, ymin, ymax, _ = self.bounds
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)

    def target(self, target_id: int) -> Target:
        for t in self.targets:
            if t.id == target_id:
                return t
        raise KeyError(target_id)

    def label_tags(self, label: int) -> tuple[str, ...]:
        """Visual tags of a semantic label, as a perception model would report them."""
        if label == LABEL_GROUND:
            return ("ground",)
        if label >= TARGET_LABEL_BASE:
            t = self.target(label - TARGET_LABEL_BASE)
            return (t.category, *t.attributes)
        if 1 <= label <= len(self.obstacles):
            return (self.obstacles[label - 1].kind,)
        return ()

    # -- cached geometry arrays -------------------------------------------

    @cached_property
    def _obstacle_array(self) -> np.ndarray:
        if not self.obstacles:
            return np.zeros((0, 5))
        return np.array([[o.x1, o.y1, o.x2, o.y2, o.height] for o in self.obstacles])

    @cached_property
    def ground_level(self) -> float:
        return float(self.terrain.heights.min()) if self.terrain.heights.size else 0.0

    @cached_property
    def _solids(self) -> tuple[np.ndarray, np.ndarray]:
        """Box solids (lo, hi corners) of obstacles and raised terrain runs."""
        lo, hi = [], []
        base = self.ground_level
        for o in self.obstacles:
            lo.append((o.x1, o.y1, min(0.0, base)))
            hi.append((o.x2, o.y2, o.height))
        f = self.terrain.frame
        h = self.terrain.heights
        for i in range(h.shape[0]):
            j = 0
            while j < h.shape[1]:
                v = h[i, j]
                k = j + 1
                while k < h.shape[1] and h[i, k] == v:
                    k += 1
                if v > base:
                    lo.append((f.x0 + i * f.cell_size, f.y0 + j * f.cell_size, base))
                    hi.append((f.x0 + (i + 1) * f.cell_size, f.y0 + k * f.cell_size, v))
                j = k
        if not lo:
            return np.zeros((0, 3)), np.zeros((0, 3))
        return np.array(lo, dtype=float), np.array(hi, dtype=float)


@dataclass(frozen=True)
class UAVState:
    position: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    collision_radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if not self.collision_radius > 0:
            raise ValueError("collision_radius must be positive")

    @property
    def pos(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def vel(self) -> np.ndarray:
        return np.array(self.velocity)


@dataclass(frozen=True)
class SensorConfig:
    bev_fov: float = math.pi / 2
    forward_fov: float = math.pi / 2
    forward_range: float = 60.0
    lidar_azimuth_bins: int = 36
    lidar_elevation_bins: int = 8
    lidar_max_range: float = 30.0
    bev_resolution: int = 200
    lidar_elevation_band: tuple[float, float] = (-math.pi / 2, math.pi / 6)
    # dense nadir scan of the high UAV; spacing must stay below the map cell
    map_lidar_spacing: float = 0.75
    map_lidar_range: float = 1000.0

    def __post_init__(self):
        positive = ("bev_fov", "forward_fov", "forward_range", "lidar_azimuth_bins",
                    "lidar_elevation_bins", "lidar_max_range", "bev_resolution",
                    "map_lidar_spacing", "map_lidar_range")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.bev_fov < math.pi:
            raise ConfigError("bev_fov must be below pi")
        lo, hi = self.lidar_elevation_band
        if not (-math.pi / 2 <= lo < hi <= math.pi / 2):
            raise ConfigError("lidar_elevation_band must satisfy -pi/2 <= lo < hi <= pi/2")

    def ray_elevations(self) -> np.ndarray:
        lo, hi = self.lidar_elevation_band
        if self.lidar_elevation_bins == 1:
            return np.array([(lo + hi) / 2])
        return np.linspace(lo, hi, self.lidar_elevation_bins)

    def ray_azimuths(self) -> np.ndarray:
        """Body-frame azimuths; azimuth 0 is the vehicle heading."""
        return 2 * math.pi * np.arange(self.lidar_azimuth_bins) / self.lidar_azimuth_bins


@dataclass(frozen=True, eq=False)
class BEVObservation:
    """Nadir observation.  Pixel ``[a, b]`` has ``a`` along +x, ``b`` along +y."""

    depth: np.ndarray
    semantic: np.ndarray
    valid: np.ndarray
    camera_pose: UAVState
    footprint: tuple[float, float, float, float]
    legend: dict = field(default_factory=dict)

    @property
    def frame(self) -> GridFrame:
        x0, y0, x1, _ = self.footprint
        n = self.depth.shape[0]
        return GridFrame(x0, y0, (x1 - x0) / n, n, self.depth.shape[1])


# ---------------------------------------------------------------- queries

def _terrain_heights(world: WorldModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    f = world.terrain.frame
    i = np.clip(np.floor((x - f.x0) / f.cell_size).astype(int), 0, f.nx - 1)
    j = np.clip(np.floor((y - f.y0) / f.cell_size).astype(int), 0, f.ny - 1)
    return world.terrain.heights[i, j]


def surface_heights(world: WorldModel, x, y) -> np.ndarray:
    """Vectorised :func:`surface_height` without the bounds check."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = _terrain_heights(world, x, y).astype(float)
    for o in world.obstacles:
        inside = (x >= o.x1) & (x <= o.x2) & (y >= o.y1) & (y <= o.y2)
        h = np.where(inside, np.maximum(h, o.height), h)
    return h


def surface_height(world: WorldModel, x: float, y: float) -> float:
    """Top of terrain or of any obstacle whose footprint contains ``(x, y)``."""
    if not world.in_bounds_xy(x, y):
        raise BoundsError(f"({x}, {y}) lies outside world bounds {world.bounds[:4]}")
    return float(surface_heights(world, x, y))


def _semantic_labels(world: WorldModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    labels = np.full(x.shape, LABEL_GROUND, dtype=np.int32)
    top = _terrain_heights(world, x, y).astype(float)
    for k, o in enumerate(world.obstacles):
        inside = (x >= o.x1) & (x <= o.x2) & (y >= o.y1) & (y <= o.y2) & (o.height >= top)
        labels[inside] = k + 1
        top = np.where(inside, o.height, top)
    for t in world.targets:
        tx, ty, _ = t.position
        near = (x - tx) ** 2 + (y - ty) ** 2 <= TARGET_RADIUS ** 2
        labels[near & (labels == LABEL_GROUND)] = TARGET_LABEL_BASE + t.id
    return labels


def bev_footprint(pose: UAVState, fov: float) -> tuple[float, float, float, float]:
    x, y, z = pose.position
    half = z * math.tan(fov / 2)
    return (x - half, y - half, x + half, y + half)


def capture_bev(world: WorldModel, pose: UAVState, cfg: SensorConfig) -> BEVObservation:
    """Nadir depth/semantic image over a square footprint of side ``2 z tan(fov/2)``."""
    x, y, z = pose.position
    if world.in_bounds_xy(x, y) and z <= surface_height(world, x, y):
        raise StateError(f"camera at z={z} is not above the surface")
    if z <= 0:
        raise StateError("camera altitude must be positive")
    fp = bev_footprint(pose, cfg.bev_fov)
    n = cfg.bev_resolution
    px = (fp[2] - fp[0]) / n
    xs = fp[0] + (np.arange(n) + 0.5) * px
    ys = fp[1] + (np.arange(n) + 0.5) * px
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    valid = world.in_bounds_xy(gx, gy)
    depth = np.where(valid, z - surface_heights(world, gx, gy), np.nan)
    semantic = np.where(valid, _semantic_labels(world, gx, gy), LABEL_INVALID).astype(np.int32)
    legend = {int(lab): world.label_tags(int(lab)) for lab in np.unique(semantic) if lab != LABEL_INVALID}
    return BEVObservation(depth=depth, semantic=semantic, valid=valid, camera_pose=pose,
                          footprint=fp, legend=legend)


def _slab_hits(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Entry distance of rays into boxes, shape ``(R, B)``; inf on miss."""
    if lo.shape[0] == 0:
        return np.full((o.shape[0], 0), np.inf)
    oo = o[:, None, :]
    dd = d[:, None, :]
    zero = dd == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None] - oo) / dd
        t2 = (hi[None] - oo) / dd
    inside = (oo >= lo[None]) & (oo <= hi[None])
    tmin = np.where(zero, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(zero, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    tnear = tmin.max(axis=2)
    tfar = tmax.min(axis=2)
    hit = (tnear <= tfar) & (tfar >= 0.0)
    return np.where(hit, np.maximum(tnear, 0.0), np.inf)


def cast_rays(world: WorldModel, origins, directions, max_range: float = np.inf) -> np.ndarray:
    """Distance along each unit direction to the first solid surface.

    Returns ``inf`` where nothing is hit within ``max_range``.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    if o.shape[0] == 1 and d.shape[0] > 1:
        o = np.repeat(o, d.shape[0], axis=0)
    lo, hi = world._solids
    out = np.empty(d.shape[0])
    base = world.ground_level
    for s in range(0, d.shape[0], _RAY_CHUNK):
        oc, dc = o[s:s + _RAY_CHUNK], d[s:s + _RAY_CHUNK]
        t = _slab_hits(oc, dc, lo, hi)
        best = t.min(axis=1) if t.shape[1] else np.full(oc.shape[0], np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = np.where(dc[:, 2] < 0, (base - oc[:, 2]) / dc[:, 2], np.inf)
        tg = np.where(oc[:, 2] <= base, 0.0, tg)
        best = np.minimum(best, tg)
        out[s:s + _RAY_CHUNK] = np.where(best <= max_range, best, np.inf)
    return out


def lidar_directions(cfg: SensorConfig, yaw: float) -> np.ndarray:
    """World-frame unit directions of the scan pattern, shape ``(R, 3)``.

    All azimuths collapse to one ray at an elevation of exactly +-pi/2.
    """
    dirs = []
    for el in cfg.ray_elevations():
        if abs(abs(el) - math.pi / 2) < 1e-12:
            dirs.append((0.0, 0.0, math.copysign(1.0, el)))
            continue
        for az in cfg.ray_azimuths():
            a = az + yaw
            dirs.append((math.cos(el) * math.cos(a), math.cos(el) * math.sin(a), math.sin(el)))
    return np.array(dirs)


def capture_lidar(world: WorldModel, state: UAVState, cfg: SensorConfig) -> np.ndarray:
    """Omnidirectional scan; returns the ``(n, 3)`` array of hit points."""
    dirs = lidar_directions(cfg, state.yaw)
    t = cast_rays(world, state.pos, dirs, cfg.lidar_max_range)
    hit = np.isfinite(t)
    return state.pos[None, :] + dirs[hit] * t[hit, None]


def capture_lidar_map(world: WorldModel, pose: UAVState, cfg: SensorConfig) -> np.ndarray:
    """Dense nadir point cloud over the BEV footprint (vertical rays on a lattice)."""
    fp = bev_footprint(pose, cfg.bev_fov)
    n = max(1, int(math.ceil((fp[2] - fp[0]) / cfg.map_lidar_spacing)))
    step = (fp[2] - fp[0]) / n
    xs = fp[0] + (np.arange(n) + 0.5) * step
    ys = fp[1] + (np.arange(n) + 0.5) * step
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    keep = world.in_bounds_xy(gx, gy)
    gx, gy = gx[keep], gy[keep]
    z = pose.position[2]
    # vertical rays: the first hit is the surface top, identical to a slab test
    top = surface_heights(world, gx, gy)
    top = np.maximum(top, world.ground_level)
    hit = (z - top <= cfg.map_lidar_range) & (top <= z)
    return np.column_stack([gx[hit], gy[hit], top[hit]])


def _box_distance(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    d = np.maximum(np.maximum(lo - p, 0.0), p - hi)
    return np.sqrt((d ** 2).sum(axis=1))


def check_collision(world: WorldModel, state: UAVState) -> bool:
    """True when the vehicle sphere touches a solid, or it left the bounds."""
    x, y, z = state.position
    xmin, xmax, ymin, ymax, zmax = world.bounds
    if not (xmin <= x <= xmax and ymin <= y <= ymax and z <= zmax):
        return True
    r = state.collision_radius
    if z - world.ground_level < r:
        return True
    lo, hi = world._solids
    if lo.shape[0] and np.any(_box_distance(state.pos, lo, hi) < r):
        return True
    return False


def segment_clear(world: WorldModel, a, b) -> bool:
    """True when the open segment from ``a`` to ``b`` crosses no solid."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    seg = b - a
    length = float(np.linalg.norm(seg))
    if length == 0.0:
        return True
    t = cast_rays(world, a, seg / length, length)
    return not (t[0] < length - 1e-9)


# ---------------------------------------------------------------- generation

DEFAULT_CATEGORIES = ("car", "truck", "bus", "bench", "fountain", "statue",
                      "tent", "container", "bicycle", "billboard")
DEFAULT_COLORS = ("red", "white", "blue", "black", "yellow", "green", "grey")


@dataclass(frozen=True)
class WorldGenParams:
    size: float = 400.0
    terrain_cell: float = 4.0
    n_buildings: int = 30
    building_size: tuple[float, float] = (12.0, 40.0)
    height_range: tuple[float, float] = (15.0, 60.0)
    min_gap: float = 8.0
    n_kiosks: int = 6
    n_targets: int = 8
    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    n_mounds: int = 0
    max_attempts: int = 400

    def validate(self) -> None:
        if not self.size > 0 or not self.terrain_cell > 0:
            raise ConfigError("size and terrain_cell must be positive")
        if self.n_buildings < 0 or self.n_kiosks < 0 or self.n_targets < 0 or self.n_mounds < 0:
            raise ConfigError("counts must be non-negative")
        lo, hi = self.building_size
        if not 0 < lo <= hi:
            raise ConfigError("building_size must satisfy 0 < lo <= hi")
        hlo, hhi = self.height_range
        if not 0 < hlo <= hhi:
            raise ConfigError("height_range must satisfy 0 < lo <= hi")
        if self.n_targets and not self.categories:
            raise ConfigError("category pool is empty")
        if any(not c or any(ch.isspace() or ch == "," for ch in c) for c in self.categories):
            raise ConfigError("categories must be single tokens without commas")
        if lo + 2 * 5.0 > self.size:
            raise ConfigError("buildings do not fit in the area")


def _rect_gap(a: Sequence[float], b: Sequence[float]) -> float:
    dx = max(b[0] - a[2], a[0] - b[2], 0.0)
    dy = max(b[1] - a[3], a[1] - b[3], 0.0)
    overlap = dx == 0.0 and dy == 0.0
    return -1.0 if overlap else math.hypot(dx, dy)


def _place_rects(rng, n, size_range, area, gap, placed, max_attempts) -> list:
    out = []
    x0, y0, x1, y1 = area
    for _ in range(n):
        for _attempt in range(max_attempts):
            w = rng.uniform(*size_range)
            d = rng.uniform(*size_range)
            if x1 - x0 <= w or y1 - y0 <= d:
                continue
            cx = rng.uniform(x0, x1 - w)
            cy = rng.uniform(y0, y1 - d)
            rect = (cx, cy, cx + w, cy + d)
            if all(_rect_gap(rect, r) >= gap for r in placed + out):
                out.append(rect)
                break
        else:
            raise GenerationError(
                f"could not place {n} footprints without overlap after {max_attempts} attempts each")
    return out


def _point_rect_distance(x, y, r) -> float:
    dx = max(r[0] - x, 0.0, x - r[2])
    dy = max(r[1] - y, 0.0, y - r[3])
    return math.hypot(dx, dy)


def generate_world(seed: int, params: WorldGenParams | None = None) -> WorldModel:
    """Seeded city block: disjoint buildings, street furniture and tagged targets."""
    params = params or WorldGenParams()
    params.validate()
    rng = np.random.default_rng(seed)
    size = params.size
    n_cells = max(1, int(math.ceil(size / params.terrain_cell)))
    cell = size / n_cells
    heights = np.zeros((n_cells, n_cells))
    for _ in range(params.n_mounds):
        w = int(rng.integers(2, max(3, n_cells // 8)))
        i0 = int(rng.integers(0, max(1, n_cells - w)))
        j0 = int(rng.integers(0, max(1, n_cells - w)))
        heights[i0:i0 + w, j0:j0 + w] = max(heights[i0:i0 + w, j0:j0 + w].max(), rng.uniform(0.5, 2.0))
    heights = np.round(heights, 3)

    area = (5.0, 5.0, size - 5.0, size - 5.0)
    buildings = _place_rects(rng, params.n_buildings, params.building_size, area,
                             params.min_gap, [], params.max_attempts)
    kiosks = _place_rects(rng, params.n_kiosks, (3.0, 5.0), area, params.min_gap,
                          buildings, params.max_attempts)
    obstacles = []
    for r in buildings:
        top = float(rng.uniform(*params.height_range))
        ground = float(_terrain_under(heights, cell, r).max())
        obstacles.append(Obstacle(*r, height=round(ground + top, 3)))
    for r in kiosks:
        ground = float(_terrain_under(heights, cell, r).max())
        obstacles.append(Obstacle(*r, height=round(ground + float(rng.uniform(2.5, 4.5)), 3)))
    rects = buildings + kiosks

    targets = []
    for tid in range(params.n_targets):
        for _attempt in range(params.max_attempts):
            near_building = buildings and rng.random() < 0.7
            if near_building:
                r = buildings[int(rng.integers(len(buildings)))]
                face = int(rng.integers(4))
                off = rng.uniform(5.0, 12.0)
                if face == 0:
                    x, y = r[0] - off, rng.uniform(r[1], r[3])
                elif face == 1:
                    x, y = r[2] + off, rng.uniform(r[1], r[3])
                elif face == 2:
                    x, y = rng.uniform(r[0], r[2]), r[1] - off
                else:
                    x, y = rng.uniform(r[0], r[2]), r[3] + off
            else:
                x, y = rng.uniform(15.0, size - 15.0), rng.uniform(15.0, size - 15.0)
            if not (15.0 <= x <= size - 15.0 and 15.0 <= y <= size - 15.0):
                continue
            if any(_point_rect_distance(x, y, q) < 4.0 for q in rects):
                continue
            if any(math.hypot(x - t.position[0], y - t.position[1]) < 20.0 for t in targets):
                continue
            dists = [(_point_rect_distance(x, y, q), k) for k, q in enumerate(buildings)]
            near = min(dists) if dists else (math.inf, -1)
            if not near_building and near[0] < 25.0:
                continue
            if near[0] < 25.0:
                context = "near_" + obstacles[near[1]].kind
            else:
                context = "open_plaza"
            category = str(params.categories[int(rng.integers(len(params.categories)))])
            color = str(DEFAULT_COLORS[int(rng.integers(len(DEFAULT_COLORS)))])
            gz = float(heights[min(int(x / cell), n_cells - 1), min(int(y / cell), n_cells - 1)])
            targets.append(Target(tid, category, (round(x, 3), round(y, 3), round(gz + TARGET_HEIGHT, 3)),
                                  (color, context)))
            break
        else:
            raise GenerationError(f"could not place target {tid}")

    obstacles = [Obstacle(round(o.x1, 3), round(o.y1, 3), round(o.x2, 3), round(o.y2, 3), o.height)
                 for o in obstacles]
    return WorldModel(ElevationGrid(heights, cell, (0.0, 0.0)), tuple(obstacles), tuple(targets))


def _terrain_under(heights: np.ndarray, cell: float, rect) -> np.ndarray:
    n = heights.shape[0]
    i0, i1 = int(rect[0] // cell), min(n - 1, int(rect[2] // cell))
    j0, j1 = int(rect[1] // cell), min(n - 1, int(rect[3] // cell))
    return heights[i0:i1 + 1, j0:j1 + 1]


# ---------------------------------------------------------------- WORLD v1

def dumps_world(world: WorldModel) -> str:
    t = world.terrain
    h = t.heights
    lines = [f"WORLD v1 {h.shape[0]} {h.shape[1]} {t.cell_size!r} {float(t.origin[0])!r} {float(t.origin[1])!r}"]
    for row in h:
        lines.append(" ".join(repr(float(v)) for v in row))
    lines.append(f"OBSTACLES {len(world.obstacles)}")
    for o in world.obstacles:
        lines.append(f"{o.x1!r} {o.y1!r} {o.x2!r} {o.y2!r} {o.height!r}")
    lines.append(f"TARGETS {len(world.targets)}")
    for tg in world.targets:
        x, y, z = tg.position
        tags = ",".join(tg.tags) if tg.tags else "-"
        lines.append(f"{tg.id} {tg.category} {x!r} {y!r} {z!r} {tags}")
    lines.append(f"ZMAX {float(world.z_max)!r}")
    return "\n".join(lines) + "\n"


def loads_world(text: str) -> WorldModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        head = lines[0].split()
        if head[:2] != ["WORLD", "v1"]:
            raise FormatError("missing 'WORLD v1' header")
        hg, wg = int(head[2]), int(head[3])
        cell, x0, y0 = float(head[4]), float(head[5]), float(head[6])
        rows = [[float(v) for v in lines[1 + r].split()] for r in range(hg)]
        heights = np.array(rows, dtype=float).reshape(hg, wg)
        k = 1 + hg
        oh = lines[k].split()
        if oh[0] != "OBSTACLES":
            raise FormatError("expected OBSTACLES section")
        obstacles = []
        for ln in lines[k + 1:k + 1 + int(oh[1])]:
            x1, y1, x2, y2, hh = (float(v) for v in ln.split())
            obstacles.append(Obstacle(x1, y1, x2, y2, hh))
        k += 1 + int(oh[1])
        th = lines[k].split()
        if th[0] != "TARGETS":
            raise FormatError("expected TARGETS section")
        targets = []
        for ln in lines[k + 1:k + 1 + int(th[1])]:
            parts = ln.split()
            tags = () if parts[5] == "-" else tuple(parts[5].split(","))
            targets.append(Target(int(parts[0]), parts[1],
                                  (float(parts[2]), float(parts[3]), float(parts[4])), tags))
        k += 1 + int(th[1])
        z_max = 300.0
        if k < len(lines) and lines[k].startswith("ZMAX"):
            z_max = float(lines[k].split()[1])
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed WORLD document: {exc}") from exc
    return WorldModel(ElevationGrid(heights, cell, (x0, y0)), tuple(obstacles), tuple(targets), z_max)


def save_world(world: WorldModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_world(world))


def load_world(path) -> WorldModel:
    with open(path, encoding="utf-8") as fh:
        return loads_world(fh.read())


def flat_world(size: float = 100.0, obstacles: Iterable[Obstacle] = (), targets: Iterable[Target] = (),
               cell: float = 10.0, origin: tuple[float, float] = (0.0, 0.0)) -> WorldModel:
    """Convenience constructor for a flat-ground world of side ``size``."""
    n = max(1, int(round(size / cell)))
    return WorldModel(ElevationGrid(np.zeros((n, n)), size / n, origin), tuple(obstacles), tuple(targets))
