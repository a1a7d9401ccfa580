"""Leading eigendata of the transfer operator on a uniform grid.

The operator is ``L_A f(x) = (1/k) sum_j exp(A(x^j)) f(x^j)``, the sum over
the preimages ``x^j`` of ``x``. On a grid of ``n`` nodes it becomes a sparse
matrix: each node pulls values from its preimages by linear interpolation.
Power iteration gives the eigenvalue ``rho`` and eigenfunction ``h``; the
potential ``A + log h - log h o T - log rho`` then has ``L 1 = 1``, and the
fixed point of its dual is the equilibrium measure ``mu``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .grid import GridFunction, grid_nodes, interpolation_matrix
from .maps import MapModel
from .moduli import ModulusSpec, choose_r0, holder_constant
from .transport import DiscreteMeasure, dual_pushforward, w1_circle

__all__ = [
    "ConvergenceError",
    "GridOperator",
    "transfer_apply",
    "power_iteration",
    "normalize_potential",
    "dual_fixed_point",
    "RPFData",
    "rpf_triple",
    "InvarianceReport",
    "invariance_check",
]


class ConvergenceError(RuntimeError):
    """An iteration hit its budget before meeting its tolerance.

    ``trace`` holds the per-step change monitored by the iteration.
    """

    def __init__(self, message: str, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class GridOperator:
    """Sparse matrix of ``L_A`` acting on values at the nodes ``i / n``."""

    def __init__(self, m: MapModel, potential: GridFunction, n: Optional[int] = None):
        self.map = m
        self.n = potential.n if n is None else int(n)
        x = grid_nodes(self.n)
        pre = m.branches(x)  # (k, n)
        weights = np.exp(potential(pre)) / m.k
        rows = []
        for j in range(m.k):
            rows.append(sp.diags(weights[j]) @ interpolation_matrix(pre[j], self.n))
        self.matrix = sp.csr_matrix(sum(rows[1:], rows[0]))
        self.matrix_t = sp.csr_matrix(self.matrix.T)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def apply_dual(self, weights: np.ndarray) -> np.ndarray:
        return self.matrix_t @ weights


def transfer_apply(m: MapModel, potential: GridFunction, f: GridFunction) -> GridFunction:
    """One application of ``L_A`` to ``f`` on the grid of ``f``."""
    op = GridOperator(m, potential, f.n)
    return GridFunction(op.apply(f.values))


def _perron(apply, n, tol, max_iter, start=None):
    v = np.ones(n) if start is None else np.asarray(start, dtype=float).copy()
    v /= np.max(np.abs(v))
    changes = []
    for it in range(1, max_iter + 1):
        w = apply(v)
        top = np.max(w)
        if not top > 0:
            raise ConvergenceError("iterate lost positivity")
        w = w / top
        change = float(np.max(np.abs(w - v)))
        changes.append(change)
        v = w
        if change < tol:
            return top, v, it
    raise ConvergenceError(f"power iteration did not reach {tol} in {max_iter} steps "
                           f"(last change {changes[-1]:.3g})", changes)


def power_iteration(m: MapModel, potential: GridFunction, tol: float = 1e-13,
                    max_iter: int = 100_000, n: Optional[int] = None,
                    operator: Optional[GridOperator] = None):
    """Leading eigenvalue ``rho`` and eigenfunction ``h`` (sup-normalised).

    Iterates from the constant function and stops once successive iterates
    differ by less than ``tol`` in sup norm. Returns ``(rho, h)``.
    """
    op = operator or GridOperator(m, potential, n)
    rho, h, _ = _perron(op.apply, op.n, tol, max_iter)
    return float(rho), GridFunction(h)


def left_perron(op: GridOperator, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Positive left eigenvector of the grid operator, normalised to sum 1."""
    _, v, _ = _perron(op.apply_dual, op.n, tol, max_iter)
    return v / math.fsum(v)


def normalize_potential(m: MapModel, potential: GridFunction, rho: float,
                        h: GridFunction) -> GridFunction:
    """``A + log h - log h o T - log rho``, evaluated exactly off the grid."""
    if not m.has_forward:
        raise ValueError("normalisation needs the forward map")
    if not np.all(h.values > 0):
        raise ValueError("eigenfunction must be positive")
    log_rho = math.log(rho)

    def func(y):
        return potential(y) + np.log(h(y)) - np.log(h(m.forward(y))) - log_rho

    return GridFunction.from_callable(func, potential.n)


def dual_fixed_point(m: MapModel, normalized_potential: GridFunction,
                     merge_resolution: float, tol: float = 1e-12, max_iter: int = 10_000,
                     start: Optional[DiscreteMeasure] = None) -> DiscreteMeasure:
    """Fixed point of the dual pushforward, starting from a Dirac mass.

    Atoms are merged onto the lattice of spacing ``merge_resolution`` after
    every step and the mass is renormalised to 1. Iteration stops when
    successive measures are within ``tol`` in ``W_1``; since every modulus
    is concave this also bounds ``W_omega`` by ``omega(tol)``.
    """
    mu = start or DiscreteMeasure.dirac(0.37)
    trace = []
    for _ in range(max_iter):
        nxt = dual_pushforward(m, normalized_potential, mu, merge_resolution)
        nxt = DiscreteMeasure(nxt.positions, nxt.masses / nxt.total)
        trace.append(w1_circle(mu, nxt))
        if trace[-1] < tol:
            return nxt
        mu = nxt
    raise ConvergenceError(f"dual iteration did not reach {tol} in {max_iter} steps", trace)


@dataclass
class RPFData:
    """Eigenvalue, eigenfunction, eigenmeasure and equilibrium measure.

    ``stationary`` holds the node weights of the left eigenvector of the
    normalised grid operator; ``mu`` is the dual fixed point.
    """

    rho: float
    h: GridFunction
    nu: DiscreteMeasure
    mu: DiscreteMeasure
    normalized_potential: GridFunction
    stationary: np.ndarray
    operator: GridOperator = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rho": self.rho, **self.diagnostics}


def rpf_triple(m: MapModel, potential: GridFunction, tol: float = 1e-13,
               merge_resolution: Optional[float] = None, dual_tol: float = 1e-12,
               max_iter: int = 100_000) -> RPFData:
    """Run the whole pipeline on the grid of ``potential``."""
    n = potential.n
    res = merge_resolution or 1.0 / n
    op = GridOperator(m, potential)
    rho, h = power_iteration(m, potential, tol, max_iter, operator=op)
    residual = float(np.max(np.abs(op.apply(h.values) - rho * h.values)) / rho)
    a_norm = normalize_potential(m, potential, rho, h)
    op_norm = GridOperator(m, a_norm)
    ones_residual = float(np.max(np.abs(op_norm.apply(np.ones(n)) - 1.0)))
    stationary = left_perron(op_norm, tol, max_iter)
    mu = dual_fixed_point(m, a_norm, res, dual_tol, max_iter)
    nu_mass = mu.masses / h(mu.positions)
    nu = DiscreteMeasure(mu.positions, nu_mass / math.fsum(nu_mass))
    diag = {
        "grid_size": n,
        "merge_resolution": res,
        "eigen_residual": residual,
        "normalized_residual": ones_residual,
        "h_min": float(np.min(h.values)),
        "h_max": float(np.max(h.values)),
    }
    return RPFData(rho, h, nu, mu, a_norm, stationary, op_norm, diag)


@dataclass
class InvarianceReport:
    errors: list
    bounds: list
    passed: bool


def invariance_check(m: MapModel, mu: DiscreteMeasure, probes: Sequence[Callable],
                     tol: float = 1e-12, merge_resolution: float = 0.0,
                     spec: Optional[ModulusSpec] = None, grid: int = 4096) -> InvarianceReport:
    """Check ``|mu(f o T) - mu(f)| <= 10 (tol + merge_resolution * Hol(f))``."""
    spec = spec or choose_r0(1.0, 0.0)
    errors, bounds = [], []
    for f in probes:
        err = abs(mu.integrate(lambda x: f(m.forward(x))) - mu.integrate(f))
        hol = holder_constant(GridFunction.from_callable(f, grid), spec)
        errors.append(err)
        bounds.append(10.0 * (tol + merge_resolution * hol))
    return InvarianceReport(errors, bounds, all(e <= b for e, b in zip(errors, bounds)))
