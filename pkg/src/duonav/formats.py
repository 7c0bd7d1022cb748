"""Plain-text dump formats for grids, trajectories and waypoint plans.

All floats are written with ``repr`` so a dump/load round trip is exact.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import FormatError
from .grid import GridFrame

GRID_KINDS = ("elev", "depth", "sem", "prob", "occ")


def _fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def dumps_grid(kind: str, values: np.ndarray, frame: GridFrame, valid: np.ndarray | None = None) -> str:
    """``GRID v1 kind H W cell_size x0 y0`` followed by one row per first index."""
    if kind not in GRID_KINDS:
        raise ValueError(f"unknown grid kind {kind!r}")
    arr = np.asarray(values, dtype=float)
    if arr.shape != frame.shape:
        raise ValueError(f"grid shape {arr.shape} does not match frame {frame.shape}")
    if valid is not None:
        arr = np.where(valid, arr, np.nan)
    lines = [f"GRID v1 {kind} {arr.shape[0]} {arr.shape[1]} {frame.cell_size!r} "
             f"{float(frame.x0)!r} {float(frame.y0)!r}"]
    lines.extend(" ".join(_fmt(v) for v in row) for row in arr)
    return "\n".join(lines) + "\n"


def loads_grid(text: str) -> tuple[str, np.ndarray, GridFrame]:
    """Parse a grid dump; invalid cells come back as NaN."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty grid document")
    head = lines[0].split()
    if head[:2] != ["GRID", "v1"] or len(head) != 8:
        raise FormatError("missing 'GRID v1' header")
    kind = head[2]
    if kind not in GRID_KINDS:
        raise FormatError(f"unknown grid kind {kind!r}")
    h, w = int(head[3]), int(head[4])
    frame = GridFrame(float(head[6]), float(head[7]), float(head[5]), h, w)
    if h == 0 or w == 0:
        return kind, np.zeros((h, w)), frame
    try:
        rows = [[float(v) for v in ln.split()] for ln in lines[1:1 + h]]
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    if len(rows) != h or any(len(r) != w for r in rows):
        raise FormatError(f"expected {h}x{w} values")
    return kind, np.array(rows, dtype=float), frame


def write_grid(path, kind: str, values, frame: GridFrame, valid=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_grid(kind, values, frame, valid))


def read_grid(path):
    with open(path, encoding="utf-8") as fh:
        return loads_grid(fh.read())


def dumps_traj(times, points) -> str:
    """``TRAJ v1`` block of ``t x y z`` lines."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    ts = np.asarray(times, dtype=float).reshape(-1)
    if ts.shape[0] != pts.shape[0]:
        raise ValueError("times and points differ in length")
    lines = ["TRAJ v1"]
    lines.extend(f"{_fmt(t)} {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}" for t, p in zip(ts, pts))
    return "\n".join(lines) + "\n"


def loads_traj(text: str) -> tuple[np.ndarray, np.ndarray]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "TRAJ v1":
        raise FormatError("missing 'TRAJ v1' header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 4:
            raise FormatError(f"bad TRAJ line: {ln!r}")
        rows.append([float(v) for v in parts])
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return arr[:, 0], arr[:, 1:]


def write_traj(path, times, points) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_traj(times, points))


def read_traj(path):
    with open(path, encoding="utf-8") as fh:
        return loads_traj(fh.read())


def dumps_plan(tau: int, waypoints) -> str:
    pts = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    lines = [f"PLAN v1 {tau} {pts.shape[0]}"]
    lines.extend(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}" for p in pts)
    return "\n".join(lines) + "\n"


def loads_plans(text: str) -> list[tuple[int, np.ndarray]]:
    """Parse one or more concatenated ``PLAN v1`` blocks."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    plans = []
    k = 0
    while k < len(lines):
        head = lines[k].split()
        if head[:2] != ["PLAN", "v1"] or len(head) != 4:
            raise FormatError(f"expected PLAN header at line {k + 1}")
        tau, n = int(head[2]), int(head[3])
        pts = np.array([[float(v) for v in lines[k + 1 + r].split()] for r in range(n)]).reshape(-1, 3)
        plans.append((tau, pts))
        k += 1 + n
    return plans
