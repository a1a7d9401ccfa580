"""Circle maps with a neutral fixed point at 0 and their inverse branches.

Each map is a degree-``k`` covering of ``R/Z`` given through its inverse
branches ``b_0, ..., b_{k-1}``, ordered so that ``b_j`` maps into the
``j``-th arc counted from 0. Branch indices are 0-based throughout, so the
expanding branch of the two-branch intermittent maps is index 1.

The contraction function ``c`` bounds how far paired preimages can be
apart: ``d(x^j, y^j) <= c(d(x, y))`` for the natural pairing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .grid import circle_distance

__all__ = [
    "ContractionFn",
    "MapModel",
    "BranchContractionReport",
    "pomeau_manneville",
    "pm_log",
    "k_fold",
    "tabulated_map",
    "forward",
    "inverse_branches",
    "contraction_fn",
    "paired_preimages",
    "verify_branch_contraction",
    "NEUTRAL_THRESHOLD",
]

NEUTRAL_THRESHOLD = 1.05
_NEWTON_MAX = 200


@dataclass(frozen=True)
class ContractionFn:
    """Bound ``c`` on distances between paired preimages.

    ``form`` is one of ``"power"``, ``"log"`` or ``"linear"`` and ``params``
    records the parameters of that family. For the intermittent maps
    ``params`` holds the asymptotic constants while evaluation uses the
    exact bound built from the neutral branch.
    """

    form: str
    params: dict
    evaluate: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    def __call__(self, r):
        r_arr = np.asarray(r, dtype=float)
        out = np.asarray(self.evaluate(r_arr), dtype=float)
        return float(out) if np.ndim(r) == 0 else out


def power_contraction(q: float, a: float) -> Callable:
    """``c(r) = (r**-q + a)**(-1/q)``, so that ``c(r)**-q = r**-q + a``."""
    def c(r):
        with np.errstate(divide="ignore"):
            return np.where(r > 0, r / (1.0 + a * r**q) ** (1.0 / q), 0.0)
    return c


def log_contraction(q: float, a: float) -> Callable:
    """``c(r) = exp(-(log(1/r)**(q+1) + a)**(1/(q+1)))``."""
    def c(r):
        with np.errstate(divide="ignore"):
            L = np.log(1.0 / np.maximum(r, 1e-300))
            return np.where(r > 0, np.exp(-((L ** (q + 1) + a) ** (1.0 / (q + 1)))), 0.0)
    return c


def linear_contraction(lam: float) -> Callable:
    return lambda r: r / lam


@dataclass(frozen=True, eq=False)
class MapModel:
    """Base record shared by all maps. Use the factory functions to build one."""

    kind: str
    params: dict
    k: int
    lam: float
    neutral_radius: float
    # index of the branch that contracts the paired distance by lam
    contracted_branch: int

    def branches(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contraction(self) -> ContractionFn:
        raise NotImplementedError

    @property
    def has_forward(self) -> bool:
        return True

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def _newton_invert(T, dT, y):
    """Invert an increasing convex branch with ``T(x) >= x`` by Newton from above.

    Starting at ``x = y`` the iterates decrease monotonically to the root.
    """
    x = np.array(y, dtype=float, copy=True)
    for _ in range(_NEWTON_MAX):
        step = (T(x) - y) / dT(x)
        x_new = np.maximum(x - step, 0.5 * y)
        if np.all(np.abs(x_new - x) <= 1e-15 * np.maximum(x, 1e-300)):
            # one extra step settles the last ulp
            step = (T(x_new) - y) / dT(x_new)
            return np.maximum(x_new - step, 0.5 * y)
        x = x_new
    return x


def _largest_below(dT, threshold, hi=0.5):
    """Largest ``x`` in [0, hi] with ``dT(x) < threshold`` for increasing ``dT``."""
    if dT(np.array(1e-300)) >= threshold:
        return 0.0
    lo, top = 0.0, hi
    if dT(np.array(top)) < threshold:
        return top
    for _ in range(200):
        mid = 0.5 * (lo + top)
        if dT(np.array(mid)) < threshold:
            lo = mid
        else:
            top = mid
    return lo


@dataclass(frozen=True, eq=False)
class _NeutralTwoBranch(MapModel):
    """Shared logic for the two-branch maps with a neutral fixed point."""

    def _T(self, x):
        raise NotImplementedError

    def _dT(self, x):
        raise NotImplementedError

    def b1(self, y):
        y = np.asarray(y, dtype=float)
        out = _newton_invert(self._T, self._dT, y)
        return np.where(y > 0, out, 0.0)

    def branches(self, y):
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        return np.stack([self.b1(y), 0.5 * (y + 1.0)])

    def forward(self, x):
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        left = np.where(x < 0.5, x, 0.25)
        return np.mod(np.where(x < 0.5, self._T(left), 2.0 * x - 1.0), 1.0)

    def derivative(self, x):
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        left = np.where(x < 0.5, x, 0.25)
        return np.where(x < 0.5, self._dT(left), 2.0)

    def tangent_point(self):
        """``(u*, x*)`` with ``T'(u*) = 2`` and ``x* = T(u*)``."""
        lo, hi = 0.0, 0.5
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self._dT(np.array(mid)) < 2.0:
                lo = mid
            else:
                hi = mid
        u = 0.5 * (lo + hi)
        return u, float(self._T(np.array(u)))

    def exact_contraction(self):
        u_star, x_star = self.tangent_point()

        def c(r):
            r = np.asarray(r, dtype=float)
            near = self.b1(np.minimum(r, x_star))
            return np.where(r <= x_star, near, u_star + 0.5 * (r - x_star))
        return c


@dataclass(frozen=True, eq=False)
class _PM(_NeutralTwoBranch):
    def _T(self, x):
        q = self.params["q"]
        return x + 2.0**q * x ** (q + 1.0)

    def _dT(self, x):
        q = self.params["q"]
        return 1.0 + (q + 1.0) * 2.0**q * x**q

    def contraction(self):
        q = self.params["q"]
        return ContractionFn("power", {"q": q, "D": 2.0**q}, self.exact_contraction())


@dataclass(frozen=True, eq=False)
class _PMLog(_NeutralTwoBranch):
    def _T(self, x):
        q = self.params["q"]
        with np.errstate(divide="ignore"):
            s = 1.0 - np.log(2.0 * np.maximum(x, 1e-300))
        return x * (1.0 + s ** (-q))

    def _dT(self, x):
        q = self.params["q"]
        with np.errstate(divide="ignore"):
            s = 1.0 - np.log(2.0 * np.maximum(x, 1e-300))
        return 1.0 + s ** (-q) + q * s ** (-q - 1.0)

    def contraction(self):
        q = self.params["q"]
        return ContractionFn("log", {"q": q, "D": q + 1.0}, self.exact_contraction())


@dataclass(frozen=True, eq=False)
class _KFold(MapModel):
    def branches(self, y):
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        return np.stack([(y + j) / self.k for j in range(self.k)])

    def forward(self, x):
        return np.mod(self.k * np.asarray(x, dtype=float), 1.0)

    def derivative(self, x):
        return np.full_like(np.asarray(x, dtype=float), float(self.k))

    def contraction(self):
        return ContractionFn("linear", {"lambda": float(self.k)}, linear_contraction(float(self.k)))


@dataclass(frozen=True, eq=False)
class _Tabulated(MapModel):
    interpolants: tuple = ()
    contraction_spec: Optional[ContractionFn] = None
    forward_ok: bool = True

    def branches(self, y):
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        return np.stack([np.mod(f(y), 1.0) for f in self.interpolants])

    @property
    def has_forward(self):
        return self.forward_ok

    def _images(self):
        return [(float(f(0.0)), float(f(1.0))) for f in self.interpolants]

    def forward(self, x):
        if not self.forward_ok:
            raise ValueError("this kernel is not the inverse of a circle map")
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        out = np.full_like(x, np.nan)
        for f, (lo, hi) in zip(self.interpolants, self._images()):
            mask = (x >= lo) & (x < hi) if hi <= 1.0 else ((x >= lo) | (x < hi - 1.0))
            if not np.any(mask):
                continue
            target = np.where(x[mask] < lo, x[mask] + 1.0, x[mask])
            a = np.zeros_like(target)
            b = np.ones_like(target)
            for _ in range(64):
                mid = 0.5 * (a + b)
                below = f(mid) < target
                a = np.where(below, mid, a)
                b = np.where(below, b, mid)
            out[mask] = 0.5 * (a + b)
        if np.any(np.isnan(out)):
            raise ValueError("branch images do not cover the circle")
        return np.mod(out, 1.0)

    def derivative(self, x):
        y = self.forward(x)
        out = np.empty_like(y)
        xm = np.mod(np.asarray(x, dtype=float), 1.0)
        b = self.branches(y)
        j = np.argmin(circle_distance(b, xm[None, :]), axis=0)
        for i, f in enumerate(self.interpolants):
            mask = j == i
            out[mask] = 1.0 / f.derivative()(y[mask])
        return out

    def contraction(self):
        return self.contraction_spec


def _check_threshold(q, threshold):
    if q <= 0:
        raise ValueError("q must be positive")
    if not 1.0 < threshold < 2.0:
        raise ValueError("neutral_threshold must lie in (1, 2)")


def pomeau_manneville(q: float, neutral_threshold: float = NEUTRAL_THRESHOLD) -> MapModel:
    """``T(x) = x + 2**q x**(q+1)`` on [0, 1/2) and ``2x - 1`` on [1/2, 1).

    The neutral set is the largest ball around 0 where ``T' < neutral_threshold``.
    """
    _check_threshold(q, neutral_threshold)
    params = {"q": float(q), "neutral_threshold": float(neutral_threshold)}
    m = _PM("pm", params, 2, 2.0, 0.0, 1)
    r_n = _largest_below(m._dT, neutral_threshold)
    object.__setattr__(m, "neutral_radius", r_n)
    return m


def pm_log(q: float, neutral_threshold: float = NEUTRAL_THRESHOLD) -> MapModel:
    """``T(x) = x (1 + (1 - log 2x)**-q)`` on (0, 1/2] and ``2x - 1`` on [1/2, 1)."""
    _check_threshold(q, neutral_threshold)
    params = {"q": float(q), "neutral_threshold": float(neutral_threshold)}
    m = _PMLog("pm_log", params, 2, 2.0, 0.0, 1)
    object.__setattr__(m, "neutral_radius", _largest_below(m._dT, neutral_threshold))
    return m


def k_fold(k: int) -> MapModel:
    """The uniformly expanding map ``x -> k x mod 1``."""
    if int(k) != k or k < 2:
        raise ValueError("k must be an integer >= 2")
    return _KFold("k_fold", {"k": int(k)}, int(k), float(k), 0.0, int(k) - 1)


def _contraction_from_dict(spec: dict) -> ContractionFn:
    form = spec.get("form")
    if form == "linear":
        lam = float(spec["lambda"])
        return ContractionFn("linear", {"lambda": lam}, linear_contraction(lam))
    if form == "power":
        q, a = float(spec["q"]), float(spec["D"])
        return ContractionFn("power", {"q": q, "D": a}, power_contraction(q, a))
    if form == "log":
        q, a = float(spec["q"]), float(spec["D"])
        return ContractionFn("log", {"q": q, "D": a}, log_contraction(q, a))
    raise ValueError(f"unknown contraction form {form!r}")


def tabulated_map(
    y: np.ndarray,
    branch_values: np.ndarray,
    lam: float,
    contraction: dict,
    neutral_radius: float = 0.0,
    contracted_branch: Optional[int] = None,
) -> MapModel:
    """Kernel given by sampled inverse branches, interpolated monotonically.

    ``branch_values`` has shape ``(k, len(y))``; ``y`` must cover [0, 1].
    Branch values may exceed 1 for the last arc and are taken mod 1 on
    evaluation. If the branch images tile the circle the kernel is the
    inverse of a map and :meth:`forward` works, otherwise it raises.
    """
    y = np.asarray(y, dtype=float)
    vals = np.atleast_2d(np.asarray(branch_values, dtype=float))
    if y[0] != 0.0 or y[-1] != 1.0 or np.any(np.diff(y) <= 0):
        raise ValueError("branch table must be sampled on an increasing grid from 0 to 1")
    if np.any(np.diff(vals, axis=1) < 0):
        raise ValueError("inverse branches must be non-decreasing")
    k = vals.shape[0]
    interps = tuple(PchipInterpolator(y, v) for v in vals)
    starts = vals[:, 0]
    ends = vals[:, -1]
    tiles = bool(np.allclose(ends[:-1], starts[1:], atol=1e-12)
                 and abs(ends[-1] - starts[0] - 1.0) < 1e-12)
    cb = k - 1 if contracted_branch is None else int(contracted_branch)
    return _Tabulated(
        "custom",
        {"lambda": float(lam), "contraction": dict(contraction)},
        k, float(lam), float(neutral_radius), cb,
        interps, _contraction_from_dict(contraction), tiles,
    )


def forward(m: MapModel, x):
    return m.forward(x)


def inverse_branches(m: MapModel, y) -> np.ndarray:
    """Array of shape ``(k, *y.shape)`` with ``b_j(y)`` in row ``j``."""
    return m.branches(np.asarray(y, dtype=float))


def contraction_fn(m: MapModel) -> ContractionFn:
    return m.contraction()


def crossing_shifts(x: np.ndarray, y: np.ndarray):
    """Branch-index shifts of the natural pairing for each pair of points.

    Returns ``(shift_x, shift_y)``. Pair ``j`` joins x-branch
    ``(j - shift_x) mod k`` with y-branch ``(j - shift_y) mod k``. A shift is
    1 exactly for the point on the far side of 0 when the unique shortest
    arc from x to y passes through 0.
    """
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    y = np.mod(np.asarray(y, dtype=float), 1.0)
    delta = np.mod(y - x, 1.0)
    up = (delta > 0) & (delta < 0.5)
    down = delta > 0.5
    # going up from x through 0: y sits just right of 0
    cross_up = up & (x + delta >= 1.0)
    cross_down = down & (x - (1.0 - delta) < 0.0)
    shift_x = np.where(cross_up, 1, 0)
    shift_y = np.where(cross_down, 1, 0)
    return shift_x, shift_y


def paired_preimages(m: MapModel, x, y):
    """Preimages of x and y matched by the natural pairing.

    Returns ``(X, Y)`` of shape ``(k, n)``; ``(X[j], Y[j])`` is pair ``j``
    and pair ``m.contracted_branch`` is the one contracted by ``m.lam``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    bx = m.branches(x)
    by = m.branches(y)
    sx, sy = crossing_shifts(x, y)
    j = np.arange(m.k)[:, None]
    X = np.take_along_axis(bx, (j - sx[None, :]) % m.k, axis=0)
    Y = np.take_along_axis(by, (j - sy[None, :]) % m.k, axis=0)
    return X, Y


@dataclass
class BranchContractionReport:
    n_samples: int
    max_excess: float
    max_contracted_excess: float
    worst_pair: tuple
    passed: bool


def verify_branch_contraction(m: MapModel, samples: int = 10_000, seed: int = 0,
                              atol: float = 1e-12) -> BranchContractionReport:
    """Check ``d(x^j, y^j) <= c(d)`` and the ``1/lam`` contraction on random pairs."""
    rng = np.random.default_rng(seed)
    x = rng.random(samples)
    y = rng.random(samples)
    d0 = circle_distance(x, y)
    X, Y = paired_preimages(m, x, y)
    dj = circle_distance(X, Y)
    c = m.contraction()(d0)
    excess = np.max(dj - c[None, :], axis=0)
    contracted = dj[m.contracted_branch] - d0 / m.lam
    worst = int(np.argmax(excess))
    return BranchContractionReport(
        n_samples=samples,
        max_excess=float(np.max(excess)),
        max_contracted_excess=float(np.max(contracted)),
        worst_pair=(float(x[worst]), float(y[worst])),
        passed=bool(np.max(excess) <= atol and np.max(contracted) <= atol),
    )
