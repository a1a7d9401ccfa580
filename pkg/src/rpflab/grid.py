"""Functions on the circle stored as values on a uniform periodic grid."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

__all__ = ["GridFunction", "grid_nodes", "interpolation_matrix", "circle_distance"]


def grid_nodes(n: int) -> np.ndarray:
    return np.arange(n) / n


def circle_distance(x, y):
    """Arc-length distance on R/Z, values in [0, 1/2]."""
    d = np.abs(np.mod(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), 1.0))
    return np.minimum(d, 1.0 - d)


def interpolation_matrix(points: np.ndarray, n: int) -> sp.csr_matrix:
    """Sparse matrix of periodic linear interpolation from ``n`` nodes to ``points``."""
    s = np.mod(points, 1.0) * n
    left = np.floor(s)
    w = s - left
    i0 = left.astype(np.int64) % n
    i1 = (i0 + 1) % n
    rows = np.arange(points.size)
    return sp.csr_matrix(
        (np.concatenate([1.0 - w, w]), (np.concatenate([rows, rows]), np.concatenate([i0, i1]))),
        shape=(points.size, n),
    )


@dataclass
class GridFunction:
    """Values on the nodes ``i / n`` with an optional exact evaluator.

    When ``func`` is given, off-grid evaluation uses it directly. Otherwise
    the values are interpolated linearly (periodically).
    """

    values: np.ndarray
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("GridFunction needs a 1-d array with at least 2 values")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("GridFunction values must be finite")

    @classmethod
    def from_callable(cls, func, n: int, keep_exact: bool = True) -> "GridFunction":
        values = np.asarray(func(grid_nodes(n)), dtype=float) * np.ones(n)
        return cls(values, func if keep_exact else None)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def nodes(self) -> np.ndarray:
        return grid_nodes(self.n)

    def interpolate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = np.mod(x, 1.0) * self.n
        left = np.floor(s)
        w = s - left
        i0 = left.astype(np.int64) % self.n
        return (1.0 - w) * self.values[i0] + w * self.values[(i0 + 1) % self.n]

    def __call__(self, x):
        if self.func is not None:
            x_arr = np.asarray(x, dtype=float)
            return np.asarray(self.func(np.mod(x_arr, 1.0)), dtype=float) * np.ones_like(x_arr)
        return self.interpolate(x)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))
