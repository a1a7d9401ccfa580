"""Discrete measures on the circle and Wasserstein distances for concave costs.

The cost of moving unit mass from ``x`` to ``y`` is ``omega(d(x, y))`` with
``omega`` one of the moduli of :mod:`rpflab.moduli`. Because such costs are
concave, optimal plans can split mass in ways a convex cost never would,
so the solvers here work with general plans rather than monotone matchings.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .grid import GridFunction, circle_distance, grid_nodes
from .maps import MapModel
from .moduli import ModulusSpec, eval_modulus, holder_constant

__all__ = [
    "DiscreteMeasure",
    "TransportPlan",
    "wasserstein",
    "w1_circle",
    "lattice_merge",
    "dual_pushforward",
    "KantorovichReport",
    "kantorovich_check",
]

_MASS_TOL = 1e-9
_MAX_UNITS = 2048
FAULT_ENV = "RPFLAB_FAULT_INJECT"


@dataclass
class DiscreteMeasure:
    """Finite positive measure ``sum_i masses[i] * delta(positions[i])``.

    Positions are reduced mod 1, sorted, and atoms at identical positions
    are merged.
    """

    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pos = np.mod(np.atleast_1d(np.asarray(self.positions, dtype=float)), 1.0)
        mass = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if pos.shape != mass.shape or pos.ndim != 1:
            raise ValueError("positions and masses must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mass))):
            raise ValueError("positions and masses must be finite")
        if np.any(mass < 0):
            raise ValueError("masses must be non-negative")
        uniq, inv = np.unique(pos, return_inverse=True)
        merged = np.bincount(inv, weights=mass, minlength=uniq.size)
        keep = merged > 0
        self.positions = uniq[keep]
        self.masses = merged[keep]

    @classmethod
    def dirac(cls, x: float) -> "DiscreteMeasure":
        return cls(np.array([x]), np.array([1.0]))

    @classmethod
    def uniform_grid(cls, n: int) -> "DiscreteMeasure":
        return cls(grid_nodes(n), np.full(n, 1.0 / n))

    @property
    def total(self) -> float:
        return math.fsum(self.masses)

    def __len__(self):
        return self.positions.size

    def integrate(self, f: Callable) -> float:
        return math.fsum(self.masses * np.asarray(f(self.positions), dtype=float))

    def cdf(self, x) -> np.ndarray:
        """``mu([0, x])`` for ``x`` in [0, 1]."""
        cum = np.cumsum(self.masses)
        idx = np.searchsorted(self.positions, np.asarray(x, dtype=float), side="right")
        return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "mass"])
            for x, m in zip(self.positions, self.masses):
                w.writerow([repr(float(x)), repr(float(m))])

    @classmethod
    def from_csv(cls, path) -> "DiscreteMeasure":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


@dataclass
class TransportPlan:
    """Sparse coupling: ``mass[i]`` goes from ``source[i]`` to ``target[i]``."""

    source: np.ndarray
    target: np.ndarray
    mass: np.ndarray
    cost: float
    method: str

    def to_csv(self, path, mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "x", "y", "mass"])
            for i, j, m in zip(self.source, self.target, self.mass):
                w.writerow([int(i), int(j), repr(float(mu.positions[i])),
                            repr(float(nu.positions[j])), repr(float(m))])

    def marginals(self, n_source: int, n_target: int):
        a = np.bincount(self.source, weights=self.mass, minlength=n_source)
        b = np.bincount(self.target, weights=self.mass, minlength=n_target)
        return a, b


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, spec: ModulusSpec) -> np.ndarray:
    return eval_modulus(spec, circle_distance(mu.positions[:, None], nu.positions[None, :]))


def _as_units(masses: np.ndarray, max_den: int):
    fracs = [Fraction(float(m)).limit_denominator(max_den) for m in masses]
    if any(abs(float(f) - m) > 1e-12 for f, m in zip(fracs, masses)):
        return None
    den = reduce(math.lcm, (f.denominator for f in fracs), 1)
    if den > max_den:
        return None
    return den, np.array([int(f * den) for f in fracs])


def _split_assignment(mu, nu, C):
    """Exact solve by splitting both measures into equal-mass units."""
    ua = _as_units(mu.masses, _MAX_UNITS)
    ub = _as_units(nu.masses, _MAX_UNITS)
    if ua is None or ub is None:
        return None
    den = math.lcm(ua[0], ub[0])
    if den > _MAX_UNITS:
        return None
    na = ua[1] * (den // ua[0])
    nb = ub[1] * (den // ub[0])
    if na.sum() != den or nb.sum() != den:
        return None
    ia = np.repeat(np.arange(na.size), na)
    ib = np.repeat(np.arange(nb.size), nb)
    rows, cols = linear_sum_assignment(C[np.ix_(ia, ib)])
    src, tgt = ia[rows], ib[cols]
    pair = src * nb.size + tgt
    uniq, counts = np.unique(pair, return_counts=True)
    source, target = uniq // nb.size, uniq % nb.size
    mass = counts / den
    cost = math.fsum(C[src, tgt]) / den
    return TransportPlan(source, target, mass, cost, "assignment")


def _import_ot():
    # keep POT from probing heavy optional backends on import
    for name in ("TORCH", "PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot
    return ot


def _network_simplex(mu, nu, C):
    ot = _import_ot()
    a = mu.masses / mu.total
    b = nu.masses / nu.total
    G, log = ot.emd(a, b, C, numItermax=10_000_000, log=True)
    if log.get("warning"):
        raise RuntimeError(f"network simplex did not converge: {log['warning']}")
    src, tgt = np.nonzero(G > 0)
    mass = G[src, tgt]
    return TransportPlan(src, tgt, mass, math.fsum(mass * C[src, tgt]), "network_simplex")


def _northwest_corner(mu, nu, C):
    """Feasible but generally non-optimal plan, used for fault injection."""
    a, b = mu.masses.copy(), nu.masses.copy()
    i = j = 0
    src, tgt, mass = [], [], []
    while i < a.size and j < b.size:
        m = min(a[i], b[j])
        src.append(i)
        tgt.append(j)
        mass.append(m)
        a[i] -= m
        b[j] -= m
        if a[i] <= 1e-15:
            i += 1
        else:
            j += 1
    src, tgt, mass = np.array(src), np.array(tgt), np.array(mass)
    return TransportPlan(src, tgt, mass, math.fsum(mass * C[src, tgt]), "northwest_corner")


def wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, spec: ModulusSpec,
                method: str = "auto"):
    """Optimal transport cost ``W_omega(mu, nu)`` and an optimal plan.

    ``method="auto"`` uses an exact assignment solve when both measures
    have rational masses with a small common denominator, and network
    simplex otherwise. Returns ``(value, plan)``.
    """
    for m in (mu, nu):
        if abs(m.total - 1.0) > _MASS_TOL:
            raise ValueError(f"measures must be probability measures (total {m.total})")
    C = cost_matrix(mu, nu, spec)
    if "transport" in os.environ.get(FAULT_ENV, ""):
        plan = _northwest_corner(mu, nu, C)
        return plan.cost, plan
    plan = None
    if method in ("auto", "assignment"):
        plan = _split_assignment(mu, nu, C)
        if plan is None and method == "assignment":
            raise ValueError("masses are not rational with a small common denominator")
    if plan is None:
        if method not in ("auto", "network_simplex"):
            raise ValueError(f"unknown method {method!r}")
        plan = _network_simplex(mu, nu, C)
    return plan.cost, plan


def w1_circle(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Closed-form ``W_1`` on the circle: ``min_c integral |F - G - c|``."""
    knots = np.union1d(np.union1d(mu.positions, nu.positions), [0.0])
    lengths = np.diff(np.concatenate([knots, [1.0]]))
    D = mu.cdf(knots) - nu.cdf(knots)
    # the minimising shift is a median of D weighted by interval length
    order = np.argsort(D)
    cum = np.cumsum(lengths[order])
    med = D[order][np.searchsorted(cum, 0.5 * cum[-1])]
    return math.fsum(lengths * np.abs(D - med))


def lattice_merge(positions: np.ndarray, masses: np.ndarray, resolution: float):
    """Split each atom linearly between its two neighbouring lattice nodes.

    Nodes are ``i * h`` with ``h = 1 / round(1 / resolution)``. The split
    keeps total mass and barycentres, and it is the transpose of periodic
    linear interpolation on the same lattice.
    """
    nb = max(1, int(round(1.0 / resolution)))
    s = np.mod(positions, 1.0) * nb
    left = np.floor(s)
    w = s - left
    i0 = left.astype(np.int64) % nb
    i1 = (i0 + 1) % nb
    acc = np.bincount(i0, weights=masses * (1.0 - w), minlength=nb)
    acc += np.bincount(i1, weights=masses * w, minlength=nb)
    keep = acc > 0
    return grid_nodes(nb)[keep], acc[keep]


def dual_pushforward(m: MapModel, potential: GridFunction, mu: DiscreteMeasure,
                     merge_resolution: Optional[float] = None) -> DiscreteMeasure:
    """Each atom ``(x, m)`` becomes ``(x^j, m exp(A(x^j)) / k)`` for every branch.

    With ``merge_resolution`` set, the result is merged onto the lattice of
    that spacing (see :func:`lattice_merge`).
    """
    pre = m.branches(mu.positions)
    mass = mu.masses[None, :] * np.exp(potential(pre)) / m.k
    pos, mass = pre.ravel(), mass.ravel()
    if merge_resolution:
        pos, mass = lattice_merge(pos, mass, merge_resolution)
    return DiscreteMeasure(pos, mass)


@dataclass
class KantorovichReport:
    wasserstein: float
    gaps: list
    max_ratio: float
    passed: bool


def kantorovich_check(mu: DiscreteMeasure, nu: DiscreteMeasure, spec: ModulusSpec,
                      probes: Sequence[Callable], holder: Optional[Sequence[float]] = None,
                      grid: int = 4096, rtol: float = 1e-9) -> KantorovichReport:
    """Check ``|mu(f) - nu(f)| <= Hol(f) * W_omega(mu, nu)`` for each probe.

    Hölder constants of the probes are estimated on a grid unless given.
    """
    value, _ = wasserstein(mu, nu, spec)
    gaps = []
    worst = 0.0
    for i, f in enumerate(probes):
        h = holder[i] if holder is not None else holder_constant(
            GridFunction.from_callable(f, grid), spec)
        gap = abs(mu.integrate(f) - nu.integrate(f))
        gaps.append(gap)
        if h > 0 and value > 0:
            worst = max(worst, gap / (h * value))
        elif gap > 0 and value == 0:
            worst = math.inf
    return KantorovichReport(value, gaps, worst, bool(worst <= 1 + rtol))
