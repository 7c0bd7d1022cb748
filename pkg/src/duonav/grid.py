"""Regular 2D grid frames shared by maps, occupancy and probability layers.

Grids are indexed ``[i, j]`` where ``i`` runs along world +x (east) and ``j``
along world +y (north). Cell ``(i, j)`` covers
``[x0 + i*c, x0 + (i+1)*c) x [y0 + j*c, y0 + (j+1)*c)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridFrame:
    x0: float
    y0: float
    cell_size: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.nx < 0 or self.ny < 0:
            raise ValueError("grid dimensions must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x1(self) -> float:
        return self.x0 + self.nx * self.cell_size

    @property
    def y1(self) -> float:
        return self.y0 + self.ny * self.cell_size

    def cell_center(self, i, j):
        """World coordinates of the center of cell(s) ``(i, j)``."""
        return (self.x0 + (np.asarray(i) + 0.5) * self.cell_size,
                self.y0 + (np.asarray(j) + 0.5) * self.cell_size)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of cell-center coordinates, each of shape ``(nx, ny)``."""
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.cell_size
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys, indexing="ij")

    def to_fractional(self, x, y):
        """Continuous index coordinates; cell centers sit at ``k + 0.5``."""
        return ((np.asarray(x, dtype=float) - self.x0) / self.cell_size,
                (np.asarray(y, dtype=float) - self.y0) / self.cell_size)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Index of the cell containing ``(x, y)``; may lie outside the grid."""
        u, v = self.to_fractional(x, y)
        return int(np.floor(u)), int(np.floor(v))

    def contains_cell(self, i: int, j: int) -> bool:
        return 0 <= i < self.nx and 0 <= j < self.ny

    def clamp_cell(self, i: int, j: int) -> tuple[int, int]:
        return (min(max(i, 0), self.nx - 1), min(max(j, 0), self.ny - 1))
