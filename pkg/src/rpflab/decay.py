"""Decay functions, fitted decay models and measured decay traces.

A decay function ``F(t, r)`` bounds how much a quantity that starts at
scale ``r`` can remain after ``t`` steps. Two parametric families are used:

* exponential, ``F(t, r) = C (1 - delta)**t r``;
* polynomial, ``F(t, r) = B r / (t r**a + b)**(1/a)``.

Fitted models are upper envelopes: the rate comes from a least-squares fit
of the log trace, and the prefactor is the smallest one that keeps the
model above every point in the fit window and above ``r`` at ``t = 0``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import GridFunction, circle_distance
from .maps import MapModel
from .moduli import ModulusSpec, holder_constant
from .rpf import GridOperator, RPFData, left_perron
from .transport import DiscreteMeasure, dual_pushforward, wasserstein

__all__ = [
    "DecayModel",
    "DecayTrace",
    "FitError",
    "decay_time",
    "fit_decay",
    "contraction_bound_check",
    "ContractionBoundReport",
    "measure_operator_decay",
    "measure_wasserstein_decay",
    "measure_wasserstein_decays",
    "measure_correlation_decay",
]

FLOOR = 1e-13
MIN_FIT_POINTS = 8
POLY_OFFSET = 0.5


class FitError(ValueError):
    """A trace cannot support the requested fit."""


@dataclass(frozen=True)
class DecayModel:
    """Parametric decay function.

    ``params`` holds ``C`` and ``delta`` for the exponential form and
    ``B``, ``b`` and ``a`` for the polynomial form.
    """

    form: str
    params: dict
    fit_range: tuple = (0, 0)
    fit_residual: float = 0.0
    slope: float = 0.0
    slope_halfwidth: float = 0.0

    def __post_init__(self):
        p = self.params
        if self.form == "exponential":
            if p["C"] < 1 or not 0 < p["delta"] < 1:
                raise ValueError("exponential model needs C >= 1 and 0 < delta < 1")
        elif self.form == "polynomial":
            if p["B"] < 1 or not 0 < p["b"] <= 1 or p["a"] <= 0:
                raise ValueError("polynomial model needs B >= 1, 0 < b <= 1 and a > 0")
        else:
            raise ValueError(f"unknown form {self.form!r}")

    def __call__(self, t, r):
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.form == "exponential":
            out = p["C"] * (1.0 - p["delta"]) ** t * r
        else:
            a = p["a"]
            out = p["B"] * r / (t * r**a + p["b"]) ** (1.0 / a)
        return float(out) if out.ndim == 0 else out

    def half_life(self, r: float) -> int:
        return decay_time(self, 0.5, r)

    def to_dict(self) -> dict:
        return {"form": self.form, "params": dict(self.params),
                "fit_range": list(self.fit_range), "fit_residual": self.fit_residual,
                "slope": self.slope, "slope_halfwidth": self.slope_halfwidth}


@dataclass
class DecayTrace:
    """Values of a decaying quantity at integer times, started at scale ``r``."""

    t: np.ndarray
    values: np.ndarray
    r: float
    label: str = ""
    meta: dict = field(default_factory=dict)

    def rows(self):
        for t, v in zip(self.t, self.values):
            yield int(t), float(v)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,value,r\n")
            for t, v in self.rows():
                fh.write(f"{t},{v!r},{self.r!r}\n")


def decay_time(model: DecayModel, theta: float, r: float) -> int:
    """Smallest integer ``t >= 0`` with ``F(t, r) <= theta * r``."""
    if not 0 < theta < 1 or r <= 0:
        raise ValueError("need 0 < theta < 1 and r > 0")
    p = model.params
    if model.form == "exponential":
        raw = math.log(theta / p["C"]) / math.log(1.0 - p["delta"])
    else:
        a = p["a"]
        raw = ((p["B"] / theta) ** a - p["b"]) / r**a
    t = max(0, math.ceil(raw - 1e-12))
    # guard against rounding on either side of the threshold
    while t > 0 and model(t - 1, r) <= theta * r:
        t -= 1
    while model(t, r) > theta * r:
        t += 1
    return t


def _window(trace: DecayTrace, t_min, t_max):
    t = np.asarray(trace.t, dtype=float)
    v = np.asarray(trace.values, dtype=float)
    lo = t[0] + 5 if t_min is None else t_min
    hi = t[-1] if t_max is None else t_max
    sel = (t >= lo) & (t <= hi)
    floor_hit = np.nonzero(sel & (np.abs(v) < FLOOR))[0]
    if floor_hit.size:
        # stop the window where the trace reaches numerical noise
        sel &= t < t[floor_hit[0]]
    if np.count_nonzero(sel) < MIN_FIT_POINTS:
        raise FitError(f"only {np.count_nonzero(sel)} usable points in [{lo}, {hi}] above the floor")
    return t[sel], np.abs(v[sel]), (float(t[sel][0]), float(t[sel][-1]))


def _bootstrap_halfwidth(x, y, resamples: int = 100, seed: int = 0) -> float:
    """Half-width of the central 95% of bootstrap slopes."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    slopes = []
    for row in idx:
        if np.ptp(x[row]) > 0:
            slopes.append(np.polyfit(x[row], y[row], 1)[0])
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    return float(hi - lo) / 2.0


def fit_decay(trace: DecayTrace, family: str, t_min: Optional[float] = None,
              t_max: Optional[float] = None) -> DecayModel:
    """Fit an exponential (log-linear) or polynomial (log-log) decay model.

    The window defaults to all times after the first five. It is cut where
    the trace first drops below ``1e-13``; fewer than eight remaining points
    raise :class:`FitError`. Polynomial fits also report a bootstrap
    (100 resamples) half-width for the log-log slope.
    """
    t, v, rng = _window(trace, t_min, t_max)
    r = float(trace.r)
    logv = np.log(v)
    if family == "exponential":
        slope, icpt = np.polyfit(t, logv, 1)
        resid = logv - (slope * t + icpt)
        if slope >= 0:
            raise FitError("trace does not decay")
        delta = -math.expm1(slope)
        C = max(1.0, float(np.max(v / (r * (1.0 - delta) ** t))))
        params = {"C": C, "delta": delta}
        halfwidth = 0.0
    elif family == "polynomial":
        if t[0] <= 0:
            raise FitError("polynomial fit needs t > 0")
        logt = np.log(t)
        slope, icpt = np.polyfit(logt, logv, 1)
        resid = logv - (slope * logt + icpt)
        if slope >= 0:
            raise FitError("trace does not decay")
        halfwidth = _bootstrap_halfwidth(logt, logv)
        a = -1.0 / float(slope)
        b = POLY_OFFSET
        B = max(1.0, float(np.max(v * (t * r**a + b) ** (1.0 / a) / r)))
        params = {"B": B, "b": b, "a": a}
    else:
        raise ValueError(f"unknown family {family!r}")
    rms = float(np.sqrt(np.mean(resid**2)))
    return DecayModel(family, params, rng, rms, float(slope), halfwidth)


@dataclass
class ContractionBoundReport:
    form: str
    a: float
    a_step: float
    rows: list
    passed: bool


def _gain_transform(c):
    """Map ``r`` to the quantity that grows by at least ``a`` per step of ``c``."""
    if c.form == "power":
        q = c.params["q"]
        return lambda r: r ** (-q)
    if c.form == "log":
        q = c.params["q"]
        return lambda r: np.log(1.0 / r) ** (q + 1)
    if c.form == "linear":
        return lambda r: -np.log(r)
    raise ValueError(f"unknown contraction form {c.form!r}")


def contraction_bound_check(c, n_max: int = 10_000,
                            r_grid: Optional[Sequence[float]] = None) -> ContractionBoundReport:
    """Find ``a > 0`` with ``c^n(r)`` below its closed-form majorant.

    ``c`` is a contraction function or a map. For the power form the majorant
    is ``(a n + r**-q)**(-1/q)``, for the log form
    ``exp(-(a n + log(1/r)**(q+1))**(1/(q+1)))``, and for the linear form
    ``r lam**-n`` (reported with ``a = log lam``).

    ``a_step`` is the smallest one-step gain ``G(c(s)) - G(s)`` over the grid
    and every iterate visited, where ``G`` is the transform above; a positive
    value telescopes into the closed bound. ``a`` is the largest constant for
    which the closed bound holds at every ``n <= n_max`` and grid radius,
    checked against the iterates directly.
    """
    if isinstance(c, MapModel):
        c = c.contraction()
    G = _gain_transform(c)
    r = np.asarray(2.0 ** -np.arange(1, 13) if r_grid is None else r_grid, dtype=float)
    n = np.arange(1, n_max + 1, dtype=float)
    iterates = np.empty((n_max + 1, r.size))
    iterates[0] = r
    for i in range(n_max):
        iterates[i + 1] = c(iterates[i])
    # iterates that underflow to 0 carry no information
    live = iterates > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        g = G(np.where(live, iterates, 1.0))
        step = np.where(live[1:], np.diff(g, axis=0), np.inf)
        gain = np.where(live[1:], (g[1:] - g[0][None, :]) / n[:, None], np.inf)
    a_step = float(np.min(step)) if n_max else math.inf
    a = float(np.min(gain)) if n_max else math.inf
    rows = [{"r": float(ri), "a_r": float(np.min(gain[:, j])) if n_max else math.inf}
            for j, ri in enumerate(r)]
    return ContractionBoundReport(c.form, a, a_step, rows, bool(a > 0 and a_step > 0))


def measure_operator_decay(m: MapModel, rpf: RPFData, f: GridFunction, t_max: int,
                           spec: Optional[ModulusSpec] = None) -> DecayTrace:
    """``sup |L^t (f - mu(f))|`` for the normalised grid operator.

    Centring uses the node weights of the grid operator's own invariant
    vector, so the trace decays to rounding level rather than to the
    discretisation error of ``mu``. With ``spec`` the Hoelder constant of
    each iterate is stored in ``meta["holder"]``.
    """
    op = rpf.operator
    if op.map is not m or op.n != f.n:
        op = GridOperator(m, rpf.normalized_potential, f.n)
    w = rpf.stationary if op is rpf.operator else left_perron(op)
    g = f.values - math.fsum(w * f.values)
    vals = [float(np.max(np.abs(g)))]
    hol = [holder_constant(g, spec)] if spec else None
    for _ in range(t_max):
        g = op.apply(g)
        vals.append(float(np.max(np.abs(g))))
        if spec:
            hol.append(holder_constant(g, spec))
    meta = {"holder": hol} if spec else {}
    return DecayTrace(np.arange(t_max + 1), np.array(vals), vals[0], "operator", meta)


def measure_correlation_decay(m: MapModel, rpf: RPFData, f: GridFunction, g: GridFunction,
                              t_max: int) -> DecayTrace:
    """``|integral L^t (f - mu(f)) g dmu|`` with the grid invariant weights."""
    op = rpf.operator
    if op.map is not m or op.n != f.n:
        op = GridOperator(m, rpf.normalized_potential, f.n)
    w = rpf.stationary if op is rpf.operator else left_perron(op)
    u = f.values - math.fsum(w * f.values)
    vals = [abs(math.fsum(w * u * g.values))]
    for _ in range(t_max):
        u = op.apply(u)
        vals.append(abs(math.fsum(w * u * g.values)))
    scale = float(np.max(np.abs(f.values))) * float(np.max(np.abs(g.values)))
    return DecayTrace(np.arange(t_max + 1), np.array(vals), scale or 1.0, "correlation")


def measure_wasserstein_decay(m: MapModel, normalized_potential: GridFunction, x: float,
                              y: float, spec: ModulusSpec, t_max: int,
                              merge_resolution: float = 1.0 / 512) -> DecayTrace:
    """``W_omega(L*^t delta_x, L*^t delta_y)`` for ``t = 0 .. t_max``.

    ``r`` is ``omega(d(x, y))``, the value at ``t = 0``.
    """
    mu, nu = DiscreteMeasure.dirac(x), DiscreteMeasure.dirac(y)
    vals = [wasserstein(mu, nu, spec)[0]]
    for _ in range(t_max):
        mu = dual_pushforward(m, normalized_potential, mu, merge_resolution)
        nu = dual_pushforward(m, normalized_potential, nu, merge_resolution)
        mu = DiscreteMeasure(mu.positions, mu.masses / mu.total)
        nu = DiscreteMeasure(nu.positions, nu.masses / nu.total)
        vals.append(wasserstein(mu, nu, spec)[0])
    d = float(circle_distance(x, y))
    return DecayTrace(np.arange(t_max + 1), np.array(vals), float(spec(d)), "wasserstein",
                      {"x": float(x), "y": float(y), "merge_resolution": merge_resolution})


def measure_wasserstein_decays(m: MapModel, normalized_potential: GridFunction,
                               pairs: Sequence[tuple], spec: ModulusSpec, t_max: int,
                               merge_resolution: float = 1.0 / 512,
                               threads: int = 1) -> list:
    """One :func:`measure_wasserstein_decay` trace per ``(x, y)`` pair.

    Pairs run in parallel when ``threads > 1``; results do not depend on
    the thread count.
    """
    def one(pair):
        return measure_wasserstein_decay(m, normalized_potential, pair[0], pair[1], spec,
                                         t_max, merge_resolution)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]
