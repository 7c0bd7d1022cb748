"""Deterministic SVG figures: trajectories over a grid and probability heatmaps."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import GridFrame  # noqa: E402

_RC = {"svg.hashsalt": "duonav", "svg.fonttype": "none", "path.simplify": False}


def _extent(frame: GridFrame):
    return (frame.x0, frame.x1, frame.y0, frame.y1)


def _save(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def trajectory_svg(background: np.ndarray | None, frame: GridFrame | None, trajectories: dict,
                   target=None, title: str = "") -> bytes:
    """Overlay named ``(N, 2+)`` trajectories on a grid; every point becomes one vertex."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 6))
        if background is not None and frame is not None:
            ax.imshow(np.asarray(background, dtype=float).T, origin="lower", extent=_extent(frame),
                      cmap="Greys_r", interpolation="nearest")
        for (name, pts), color in zip(sorted(trajectories.items()), ("tab:blue", "tab:orange", "tab:green")):
            pts = np.asarray(pts, dtype=float)
            ax.plot(pts[:, 0], pts[:, 1], color=color, lw=1.2, label=name, gid=f"traj-{name}")
        if target is not None:
            ax.plot([target[0]], [target[1]], marker="*", color="red", ms=12, ls="none", label="target")
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right", fontsize=8)
        return _save(fig)


def heatmap_svg(prob: np.ndarray, frame: GridFrame, title: str = "") -> bytes:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 5))
        im = ax.imshow(np.asarray(prob, dtype=float).T, origin="lower", extent=_extent(frame),
                       cmap="viridis", interpolation="nearest")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        if title:
            ax.set_title(title)
        return _save(fig)
