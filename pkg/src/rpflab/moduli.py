"""Moduli of continuity of power-log type on the circle.

The family is

    omega(r) = r**alpha / log(r0 / r)**beta,    0 < r <= diam_clip,

with ``omega(0) = 0``. Beyond ``diam_clip`` the modulus is continued by its
tangent line, which keeps it increasing and concave on the whole half-line.
``alpha = 1, beta = 0`` is the Lipschitz modulus and ``alpha = 0, beta > 0``
gives the pure logarithmic moduli that sit below every Hölder modulus.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModulusSpec",
    "choose_r0",
    "eval_modulus",
    "half_ratio",
    "holder_constant",
]

_SCAN_POINTS = 10_000
_MAX_LOG_R0 = 400


@dataclass(frozen=True)
class ModulusSpec:
    """Parameters of ``r**alpha / log(r0/r)**beta``.

    Build instances with :func:`choose_r0`, which picks an admissible ``r0``.
    """

    alpha: float
    beta: float
    r0: float
    diam_clip: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.alpha == 0.0 and self.beta <= 0.0:
            raise ValueError("alpha = 0 requires beta > 0")
        if self.alpha == 1.0 and self.beta < 0.0:
            raise ValueError("alpha = 1 requires beta >= 0")
        if self.diam_clip <= 0:
            raise ValueError("diam_clip must be positive")
        if self.r0 <= self.diam_clip:
            raise ValueError("r0 must exceed diam_clip")

    def __call__(self, r):
        return eval_modulus(self, r)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "r0": self.r0,
                "diam_clip": self.diam_clip}


def _raw(alpha, beta, r0, r):
    with np.errstate(all="ignore"):
        out = r**alpha / np.log(r0 / r) ** beta
    return np.where(r > 0, out, 0.0)


def _raw_slope(alpha, beta, r0, r):
    # derivative of r^a L^-b with L = log(r0/r)
    L = math.log(r0 / r)
    return r ** (alpha - 1) * L ** (-beta) * (alpha + beta / L)


def _admissible(alpha, beta, r0, clip):
    r = np.linspace(0.0, clip, _SCAN_POINTS + 1)
    w = _raw(alpha, beta, r0, r)
    if not np.all(np.isfinite(w)):
        return False
    d1 = np.diff(w)
    if np.any(d1 <= 0):
        return False
    d2 = np.diff(d1)
    if np.any(d2 > 1e-12 * max(w[-1], 1.0)):
        return False
    if beta < 0 and half_ratio_raw(alpha, beta, r0) >= 1.0:
        return False
    return True


def choose_r0(alpha: float, beta: float, diam_clip: float = 1.0) -> ModulusSpec:
    """Smallest ``r0 = e**m`` making the modulus increasing and concave.

    The check runs on a uniform grid of ``[0, diam_clip]``. For ``beta == 0``
    the choice of ``r0`` has no effect and ``e * diam_clip`` is used.
    """
    if beta == 0.0:
        return ModulusSpec(alpha, 0.0, math.e * diam_clip, diam_clip)
    start = max(1, math.ceil(math.log(diam_clip)) + 1)
    for m in range(start, _MAX_LOG_R0):
        r0 = math.exp(m)
        if _admissible(alpha, beta, r0, diam_clip):
            return ModulusSpec(alpha, beta, r0, diam_clip)
    raise ValueError(f"no admissible r0 found for alpha={alpha}, beta={beta}")


def eval_modulus(spec: ModulusSpec, r):
    """Evaluate the modulus at ``r >= 0`` (scalar or array)."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("modulus is defined for r >= 0 only")
    c = spec.diam_clip
    inside = np.minimum(r_arr, c)
    out = _raw(spec.alpha, spec.beta, spec.r0, inside)
    if np.any(r_arr > c):
        w_c = float(_raw(spec.alpha, spec.beta, spec.r0, np.array(c)))
        slope = _raw_slope(spec.alpha, spec.beta, spec.r0, c)
        out = np.where(r_arr > c, w_c + slope * (r_arr - c), out)
    if np.ndim(r) == 0:
        return float(out)
    return out


def half_ratio_raw(alpha, beta, r0):
    theta = 2.0 ** (-alpha)
    if beta < 0:
        theta *= (1.0 + math.log(2.0) / math.log(r0)) ** (-beta)
    return theta


def half_ratio(spec: ModulusSpec) -> float:
    """A constant ``theta`` with ``omega(r/2) <= theta * omega(r)`` for r <= diam_clip."""
    if spec.alpha == 0:
        raise ValueError("pure logarithmic moduli have no half-ratio below 1")
    return half_ratio_raw(spec.alpha, spec.beta, spec.r0)


def _circle_gap(n, lag):
    return min(lag, n - lag) / n


def holder_constant(f, spec: ModulusSpec, max_dense_lag: int = 2048) -> float:
    """Estimate ``sup |f(x) - f(y)| / omega(d(x, y))`` over grid node pairs.

    ``f`` is either a :class:`~rpflab.grid.GridFunction` or a 1-d array of
    values on the uniform periodic grid ``i / n``. All lags up to
    ``max_dense_lag`` are scanned; longer lags are sampled geometrically,
    so on very fine grids the result is a lower estimate of the grid sup.
    """
    values = np.asarray(getattr(f, "values", f), dtype=float)
    n = values.size
    if n < 2:
        return 0.0
    half = n // 2
    lags = np.arange(1, min(half, max_dense_lag) + 1)
    if half > max_dense_lag:
        extra = np.unique(np.geomspace(max_dense_lag, half, 256).astype(int))
        lags = np.union1d(lags, extra)
    best = 0.0
    for lag in lags:
        diff = np.max(np.abs(values - np.roll(values, -int(lag))))
        w = eval_modulus(spec, _circle_gap(n, int(lag)))
        best = max(best, diff / w)
    return float(best)
