"""Global orthographic map from nadir observations and elevation scans.

Tiles are written onto a fixed lattice anchored at the world origin, so
stitching never resamples previously written content.  The fixed-size view
exposed to the pilot (``N_o x N_o``) is a nearest-neighbour resampling of that
lattice over the square enclosing every footprint seen so far.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateAltitudeError
from .grid import GridFrame
from .world import (LABEL_INVALID, BEVObservation, ElevationGrid, SensorConfig, UAVState,
                    WorldModel, capture_bev, capture_lidar_map)

HISTORY_LIMIT = 5
DEFAULT_MAP_SIZE = 256


def reconstruct_elevation(clouds: Sequence[np.ndarray], frame: GridFrame) -> ElevationGrid:
    """Max-z binning of point clouds into ``frame``; empty cells are invalid."""
    elev = np.full(frame.shape, -np.inf)
    for cloud in clouds:
        pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
        if pts.shape[0] == 0:
            continue
        u, v = frame.to_fractional(pts[:, 0], pts[:, 1])
        i = np.floor(u).astype(int)
        j = np.floor(v).astype(int)
        keep = (i >= 0) & (i < frame.nx) & (j >= 0) & (j < frame.ny)
        np.maximum.at(elev, (i[keep], j[keep]), pts[keep, 2])
    valid = np.isfinite(elev)
    heights = np.where(valid, elev, np.nan)
    return ElevationGrid(heights, frame.cell_size, (frame.x0, frame.y0), valid=valid)


@dataclass(frozen=True, eq=False)
class OrthoTile:
    """One observation resampled onto lattice cells of a map frame."""

    frame: GridFrame
    semantic: np.ndarray
    elevation: np.ndarray
    valid: np.ndarray
    footprint: tuple[float, float, float, float]
    legend: dict = field(default_factory=dict)


def _lattice_span(lo: float, hi: float, origin: float, cell: float, n: int | None):
    """Index range of lattice cells whose centers fall in ``[lo, hi)``."""
    a = math.ceil((lo - origin) / cell - 0.5)
    b = math.ceil((hi - origin) / cell - 0.5)   # exclusive
    if n is not None:
        a, b = max(a, 0), min(b, n)
    return a, max(a, b)


def reproject(obs: BEVObservation, elevation: ElevationGrid | None, frame: GridFrame,
              clip: bool = True) -> OrthoTile:
    """Map each lattice cell under the footprint to the BEV pixel above it.

    Nadir model: the ground coordinate of a pixel is a linear function of its
    index across the footprint, so the inverse is a floor division.  With
    ``clip`` only cells inside ``frame`` are produced; otherwise the lattice of
    ``frame`` is extended as needed.
    """
    fp = obs.footprint
    c = frame.cell_size
    ia, ib = _lattice_span(fp[0], fp[2], frame.x0, c, frame.nx if clip else None)
    ja, jb = _lattice_span(fp[1], fp[3], frame.y0, c, frame.ny if clip else None)
    sub = GridFrame(frame.x0 + ia * c, frame.y0 + ja * c, c, ib - ia, jb - ja)
    cx, cy = sub.centers()
    bf = obs.frame
    a = np.clip(np.floor((cx - bf.x0) / bf.cell_size).astype(int), 0, bf.nx - 1)
    b = np.clip(np.floor((cy - bf.y0) / bf.cell_size).astype(int), 0, bf.ny - 1)
    valid = obs.valid[a, b].copy() if sub.nx and sub.ny else np.zeros(sub.shape, dtype=bool)
    semantic = np.where(valid, obs.semantic[a, b], LABEL_INVALID).astype(np.int32) \
        if sub.nx and sub.ny else np.zeros(sub.shape, dtype=np.int32)
    elev = np.full(sub.shape, np.nan)
    if elevation is not None and sub.nx and sub.ny:
        ef = elevation.frame
        ei = np.floor((cx - ef.x0) / ef.cell_size + 1e-9).astype(int)
        ej = np.floor((cy - ef.y0) / ef.cell_size + 1e-9).astype(int)
        inside = (ei >= 0) & (ei < ef.nx) & (ej >= 0) & (ej < ef.ny)
        ei, ej = np.clip(ei, 0, ef.nx - 1), np.clip(ej, 0, ef.ny - 1)
        ok = inside & elevation.valid_mask()[ei, ej]
        elev = np.where(ok, elevation.heights[ei, ej], np.nan)
        valid &= ok
        semantic = np.where(valid, semantic, LABEL_INVALID).astype(np.int32)
    return OrthoTile(sub, semantic, elev, valid, tuple(fp), dict(obs.legend))


@dataclass(frozen=True, eq=False)
class HistoryEntry:
    pose: UAVState
    footprint: tuple[float, float, float, float]
    cloud: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class _Canvas:
    frame: GridFrame
    semantic: np.ndarray
    elevation: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class OrthoMap:
    semantic: np.ndarray
    elevation: np.ndarray
    valid: np.ndarray
    frame: GridFrame
    history: tuple[HistoryEntry, ...] = ()
    legend: dict = field(default_factory=dict)
    size: int = DEFAULT_MAP_SIZE
    base_cell: float = 1.0
    extent: tuple[float, float, float, float] | None = None
    canvas: _Canvas | None = None

    @property
    def trajectory(self) -> list[tuple[float, float, float]]:
        return [h.pose.position for h in self.history]

    def lattice(self) -> GridFrame:
        """Zero-size frame describing the stitching lattice."""
        return GridFrame(0.0, 0.0, self.base_cell, 0, 0)


def empty_orthomap(size: int = DEFAULT_MAP_SIZE, base_cell: float = 1.0) -> OrthoMap:
    frame = GridFrame(0.0, 0.0, base_cell, size, size)
    return OrthoMap(semantic=np.full((size, size), LABEL_INVALID, dtype=np.int32),
                    elevation=np.full((size, size), np.nan),
                    valid=np.zeros((size, size), dtype=bool),
                    frame=frame, size=size, base_cell=base_cell)


def _grow_canvas(canvas: _Canvas | None, sub: GridFrame, cell: float) -> _Canvas:
    ia = int(round(sub.x0 / cell))
    ja = int(round(sub.y0 / cell))
    ib, jb = ia + sub.nx, ja + sub.ny
    if canvas is not None:
        ca = int(round(canvas.frame.x0 / cell))
        cb = int(round(canvas.frame.y0 / cell))
        ia, ja = min(ia, ca), min(ja, cb)
        ib, jb = max(ib, ca + canvas.frame.nx), max(jb, cb + canvas.frame.ny)
    frame = GridFrame(ia * cell, ja * cell, cell, ib - ia, jb - ja)
    sem = np.full(frame.shape, LABEL_INVALID, dtype=np.int32)
    elev = np.full(frame.shape, np.nan)
    valid = np.zeros(frame.shape, dtype=bool)
    if canvas is not None:
        oi = int(round(canvas.frame.x0 / cell)) - ia
        oj = int(round(canvas.frame.y0 / cell)) - ja
        sl = (slice(oi, oi + canvas.frame.nx), slice(oj, oj + canvas.frame.ny))
        sem[sl] = canvas.semantic
        elev[sl] = canvas.elevation
        valid[sl] = canvas.valid
    return _Canvas(frame, sem, elev, valid)


def _render(canvas: _Canvas | None, extent, size: int, fallback: GridFrame):
    if canvas is None or extent is None:
        return (np.full((size, size), LABEL_INVALID, dtype=np.int32), np.full((size, size), np.nan),
                np.zeros((size, size), dtype=bool), fallback)
    x0, y0, x1, y1 = extent
    side = max(x1 - x0, y1 - y0)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    frame = GridFrame(cx - side / 2, cy - side / 2, side / size, size, size)
    gx, gy = frame.centers()
    cf = canvas.frame
    i = np.floor((gx - cf.x0) / cf.cell_size).astype(int)
    j = np.floor((gy - cf.y0) / cf.cell_size).astype(int)
    inside = (i >= 0) & (i < cf.nx) & (j >= 0) & (j < cf.ny)
    i, j = np.clip(i, 0, cf.nx - 1), np.clip(j, 0, cf.ny - 1)
    valid = inside & canvas.valid[i, j]
    sem = np.where(valid, canvas.semantic[i, j], LABEL_INVALID).astype(np.int32)
    elev = np.where(valid, canvas.elevation[i, j], np.nan)
    return sem, elev, valid, frame


def stitch(ortho: OrthoMap, tile: OrthoTile, pose: UAVState, cloud: np.ndarray | None = None) -> OrthoMap:
    """Write ``tile`` over the map (newest wins) and advance the history ring.

    Cells of observations that fall out of the five-entry history persist; only
    the history record itself is capped.  Stitching the observation that is
    already newest in the history leaves the map unchanged.
    """
    cell = ortho.base_cell
    if abs(tile.frame.cell_size - cell) > 1e-12 * cell:
        raise ValueError("tile lattice does not match the map lattice")
    canvas = _grow_canvas(ortho.canvas, tile.frame, cell)
    if tile.frame.nx and tile.frame.ny:
        oi = int(round(tile.frame.x0 / cell)) - int(round(canvas.frame.x0 / cell))
        oj = int(round(tile.frame.y0 / cell)) - int(round(canvas.frame.y0 / cell))
        sl = (slice(oi, oi + tile.frame.nx), slice(oj, oj + tile.frame.ny))
        w = tile.valid
        canvas.semantic[sl][w] = tile.semantic[w]
        canvas.elevation[sl][w] = tile.elevation[w]
        canvas.valid[sl][w] = True
    fp = tile.footprint
    if ortho.extent is None:
        extent = fp
    else:
        e = ortho.extent
        extent = (min(e[0], fp[0]), min(e[1], fp[1]), max(e[2], fp[2]), max(e[3], fp[3]))
    entry = HistoryEntry(pose, fp, cloud)
    history = ortho.history
    if not history or history[-1].pose != pose or history[-1].footprint != fp:
        history = (history + (entry,))[-HISTORY_LIMIT:]
    legend = dict(ortho.legend)
    legend.update(tile.legend)
    sem, elev, valid, frame = _render(canvas, extent, ortho.size, ortho.frame)
    return OrthoMap(sem, elev, valid, frame, history, legend, ortho.size, cell, extent, canvas)


def integrate_observation(ortho: OrthoMap, obs: BEVObservation, cloud: np.ndarray) -> OrthoMap:
    """Elevation from the accumulated clouds, reprojection, then stitching."""
    lattice = ortho.lattice()
    tile_frame = reproject(obs, None, lattice, clip=False).frame
    clouds = [h.cloud for h in ortho.history if h.cloud is not None] + [cloud]
    elevation = reconstruct_elevation(clouds, tile_frame)
    tile = reproject(obs, elevation, tile_frame)
    return stitch(ortho, tile, obs.camera_pose, cloud)


def observe(world: WorldModel, pose: UAVState, cfg: SensorConfig) -> tuple[BEVObservation, np.ndarray]:
    return capture_bev(world, pose, cfg), capture_lidar_map(world, pose, cfg)


@dataclass(frozen=True, eq=False)
class GlobalDepthMap:
    depth: np.ndarray
    valid: np.ndarray
    reference_altitude: float
    frame: GridFrame


def global_depth(ortho: OrthoMap, z_h: float) -> GlobalDepthMap:
    """Per-cell distance from the camera plane at ``z_h`` down to the surface."""
    if ortho.valid.any():
        top = float(ortho.elevation[ortho.valid].max())
        if z_h <= top:
            raise DegenerateAltitudeError(f"reference altitude {z_h} is not above elevation {top}")
    depth = np.where(ortho.valid, z_h - ortho.elevation, np.nan)
    return GlobalDepthMap(depth, ortho.valid.copy(), float(z_h), ortho.frame)
