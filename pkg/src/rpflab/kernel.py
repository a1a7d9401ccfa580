"""Paired backward trajectories and flatness of potentials.

A backward word ``w`` of length ``t`` selects one inverse branch per step.
Two points walked along the same word, with branches matched by the natural
pairing, stay close; the quantities here measure how close and what that
does to Birkhoff sums ``A^t = A(x_1) + ... + A(x_t)`` of a potential.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .grid import GridFunction, circle_distance
from .maps import MapModel, crossing_shifts, paired_preimages
from .moduli import ModulusSpec, eval_modulus, holder_constant

__all__ = [
    "Pairing",
    "natural_pairing",
    "CoupledTrajectory",
    "coupled_trajectory",
    "CostEstimate",
    "coupling_cost",
    "FlatnessCertificate",
    "flatness_series",
    "flatness_empirical",
    "flatness_runs",
    "word_sum_operator",
    "tail_majorant",
]

_EXHAUSTIVE_LIMIT = 1 << 20


@dataclass(frozen=True)
class Pairing:
    """Branch matching for one pair of points.

    Pair ``j`` joins x-branch ``eta[j]`` with y-branch ``sigma[j]``.
    """

    eta: tuple
    sigma: tuple
    contracted_index: int
    crosses_zero: bool


def natural_pairing(m: MapModel, x: float, y: float) -> Pairing:
    sx, sy = crossing_shifts(np.array([x]), np.array([y]))
    sx, sy = int(sx[0]), int(sy[0])
    eta = tuple((j - sx) % m.k for j in range(m.k))
    sigma = tuple((j - sy) % m.k for j in range(m.k))
    return Pairing(eta, sigma, m.contracted_branch, bool(sx or sy))


def _step(m: MapModel, x, y, letters):
    X, Y = paired_preimages(m, x, y)
    idx = np.arange(x.size)
    return X[letters, idx], Y[letters, idx]


@dataclass
class CoupledTrajectory:
    """Positions and Birkhoff sums along one backward word."""

    word: tuple
    x: np.ndarray
    y: np.ndarray
    A_x: np.ndarray
    A_y: np.ndarray

    @property
    def distance(self) -> np.ndarray:
        return circle_distance(self.x, self.y)

    def rows(self):
        d = self.distance
        for t in range(self.x.size):
            yield (t, self.x[t], self.y[t], d[t], self.A_x[t], self.A_y[t])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x_t", "y_t", "d", "A_x", "A_y"])
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def coupled_trajectory(m: MapModel, x: float, y: float, word: Sequence[int],
                       potential: Optional[GridFunction] = None) -> CoupledTrajectory:
    """Walk ``x`` and ``y`` backwards along ``word`` using the natural pairing."""
    word = tuple(int(w) for w in word)
    if any(not 0 <= w < m.k for w in word):
        raise ValueError(f"word letters must lie in 0..{m.k - 1}")
    xs = [float(np.mod(x, 1.0))]
    ys = [float(np.mod(y, 1.0))]
    cx, cy = np.array(xs), np.array(ys)
    for letter in word:
        cx, cy = _step(m, cx, cy, np.array([letter]))
        xs.append(float(cx[0]))
        ys.append(float(cy[0]))
    xs, ys = np.array(xs), np.array(ys)
    if potential is None:
        ax = ay = np.zeros_like(xs)
    else:
        ax = np.concatenate([[0.0], np.cumsum(potential(xs[1:]))])
        ay = np.concatenate([[0.0], np.cumsum(potential(ys[1:]))])
    return CoupledTrajectory(word, xs, ys, ax, ay)


@dataclass(frozen=True)
class CostEstimate:
    value: float
    stderr: float
    n_words: int


def _philox(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(stream)]))


def coupling_cost(m: MapModel, x: float, y: float, t: int, spec: ModulusSpec,
                  mode: str = "exhaustive", n_samples: int = 10_000,
                  seed: int = 0) -> CostEstimate:
    """Mean of ``omega(d(x_t, y_t))`` over backward words of length ``t``.

    ``mode="exhaustive"`` averages over all ``k**t`` words exactly;
    ``mode="sampled"`` draws ``n_samples`` uniform words.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if mode == "exhaustive":
        if m.k**t > _EXHAUSTIVE_LIMIT:
            raise ValueError(f"k**t = {m.k**t} words is too many for exhaustive mode")
        X = np.array([np.mod(x, 1.0)])
        Y = np.array([np.mod(y, 1.0)])
        for _ in range(t):
            Xn, Yn = paired_preimages(m, X, Y)
            X, Y = Xn.T.ravel(), Yn.T.ravel()
        vals = eval_modulus(spec, circle_distance(X, Y))
        return CostEstimate(math.fsum(vals) / vals.size, 0.0, int(vals.size))
    if mode == "sampled":
        rng = _philox(seed)
        letters = rng.integers(0, m.k, size=(t, n_samples))
        X = np.full(n_samples, np.mod(x, 1.0))
        Y = np.full(n_samples, np.mod(y, 1.0))
        for s in range(t):
            X, Y = _step(m, X, Y, letters[s])
        vals = eval_modulus(spec, circle_distance(X, Y))
        err = float(np.std(vals, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
        return CostEstimate(float(np.mean(vals)), err, n_samples)
    raise ValueError(f"unknown mode {mode!r}")


def word_sum_operator(m: MapModel, potential: GridFunction, f, x, t: int) -> np.ndarray:
    """``(1/k^t) sum_w exp(A^t(x_w)) f(x_w)`` summed over every backward word."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pts = x[None, :]
    weight = np.zeros_like(pts)
    for _ in range(t):
        nxt = m.branches(pts.ravel()).reshape((m.k,) + pts.shape)
        weight = (weight[None] + potential(nxt)).reshape(-1, x.size)
        pts = nxt.reshape(-1, x.size)
    vals = np.exp(weight) * f(pts)
    return vals.sum(axis=0) / m.k**t


@dataclass
class FlatnessCertificate:
    """Outcome of a flatness check.

    ``constant`` bounds ``|A^t(x) - A^t(y)| / omega(d(x, y))``. For the series
    method it is per unit seminorm of the potential. ``status`` is one of
    ``"certified"``, ``"refuted"`` or ``"inconclusive"``.
    """

    method: str
    status: str
    constant: float
    potential_modulus: dict
    target_modulus: dict
    evidence: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "certified"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "status": self.status,
            "passed": self.passed,
            "constant": self.constant,
            "potential_modulus": self.potential_modulus,
            "target_modulus": self.target_modulus,
            "evidence": self.evidence,
            "diagnostics": self.diagnostics,
        }


def _series_converges(form: str, q: float, spec: ModulusSpec) -> bool:
    a, b = spec.alpha, spec.beta
    if form == "linear":
        return a > 0 or b > 1
    if form == "power":
        p = a / q
        return p > 1 or (p == 1 and b > 1)
    if form == "log":
        return a > 0 or b / (q + 1) > 1
    return False


def _increment(c, form, q, s):
    """Smallest per-step gain of the majorant variable on ``(0, s]``."""
    if form == "power":
        lo = max(s * 1e-8, 1e-10 ** (1.0 / q))
        r = np.geomspace(min(lo, s), s, 400)
        g = c(r) ** (-q) - r ** (-q)
    else:
        lo = max(s * 1e-8, 1e-300)
        r = np.geomspace(min(lo, s), s, 400)
        g = np.log(1.0 / c(r)) ** (q + 1) - np.log(1.0 / r) ** (q + 1)
    return 0.99 * float(np.min(g))


def tail_majorant(contraction, spec: ModulusSpec, s: float) -> float:
    """Upper bound on ``sum_{m>=1} omega(c^m(s))`` from the asymptotics of ``c``.

    The summand is bounded by a decreasing function ``phi(m)`` and the sum by
    the integral of ``phi`` over ``[0, inf)``. Returns ``inf`` when that
    integral diverges.
    """
    form = contraction.form
    if s <= 0:
        return 0.0
    if form == "linear":
        lam = contraction.params["lambda"]
        if lam <= 1 or not _series_converges(form, 1.0, spec):
            return math.inf
        phi = lambda u: eval_modulus(spec, s * lam ** (-u))
    else:
        q = contraction.params["q"]
        if not _series_converges(form, q, spec):
            return math.inf
        a = _increment(contraction, form, q, s)
        if a <= 0:
            return math.inf
        if form == "power":
            s0 = s ** (-q)
            if spec.beta == 0.0:
                # closed form of the integral of (a u + s0)^(-alpha/q)
                p = spec.alpha / q
                return s0 ** (1.0 - p) / (a * (p - 1.0))
            phi = lambda u: eval_modulus(spec, (a * u + s0) ** (-1.0 / q))
        else:
            L = math.log(1.0 / s) ** (q + 1)
            phi = lambda u: eval_modulus(spec, math.exp(-((a * u + L) ** (1.0 / (q + 1)))))
    val, _ = integrate.quad(phi, 0.0, math.inf, limit=400)
    return float(val)


def default_r_grid() -> np.ndarray:
    return 2.0 ** -np.arange(1, 17)


def _tail_small(partial, tails, w, rtol):
    if not np.all(np.isfinite(tails)):
        return False
    scale = np.max((partial + tails) / w)
    return bool(np.all(tails / w <= rtol * scale))


def flatness_series(m, potential_modulus: ModulusSpec, target_modulus: ModulusSpec,
                    r_grid: Optional[np.ndarray] = None, n_max: int = 200_000,
                    tail_rtol: float = 0.05, check_every: int = 2_000) -> FlatnessCertificate:
    """Certify flatness from ``S(r) = sum_{n>=1} omega_A(c^n(r))``.

    Partial sums are computed by iterating ``c`` and the remainder is bounded
    by :func:`tail_majorant`. The certificate holds when the remainder is
    finite and its share ``tail(r) / omega(r)`` is at most ``tail_rtol`` of
    the certified constant at every grid radius.

    ``m`` is a map or a bare contraction function. The reported constant is
    ``max_r (S(r) + tail(r)) / omega(r)`` over the grid; the diagnostics also
    hold ``max_j S(r_{j-1}) / omega(r_j)``, which covers radii between grid
    points.
    """
    c = m.contraction() if isinstance(m, MapModel) else m
    r = np.sort(np.asarray(default_r_grid() if r_grid is None else r_grid, dtype=float))
    s = r.copy()
    partial = np.zeros_like(r)
    n = 0
    tails = np.full_like(r, math.inf)
    w = eval_modulus(target_modulus, r)
    divergent = not math.isfinite(tail_majorant(c, potential_modulus, float(r[0])))
    budget = min(n_max, 20_000) if divergent else n_max
    history = []
    while n < budget:
        steps = min(check_every, budget - n)
        for _ in range(steps):
            s = c(s)
            partial += eval_modulus(potential_modulus, s)
        n += steps
        history.append((n, float(partial[-1])))
        if divergent:
            continue
        tails = np.array([tail_majorant(c, potential_modulus, float(v)) for v in s])
        if _tail_small(partial, tails, w, tail_rtol):
            break
    total = partial + tails
    upper = np.concatenate([total[1:], [total[-1]]])
    ratios = total / w
    evidence = [
        {"r": float(ri), "partial_sum": float(pi), "tail": float(ti), "omega": float(wi)}
        for ri, pi, ti, wi in zip(r, partial, tails, w)
    ]
    diag = {"iterations": n, "contraction": {"form": c.form, **c.params},
            "partial_sum_history": history}
    if np.all(np.isfinite(total)):
        diag["bracketed_constant"] = float(np.max(upper / w))
    if divergent:
        return FlatnessCertificate("series", "refuted", math.inf, potential_modulus.to_dict(),
                                   target_modulus.to_dict(), evidence,
                                   {**diag, "reason": "tail majorant diverges"})
    ok = _tail_small(partial, tails, w, tail_rtol)
    status = "certified" if ok else "inconclusive"
    if not ok:
        diag["reason"] = f"tail share above {tail_rtol} after {n} iterations"
    return FlatnessCertificate("series", status, float(np.max(ratios)),
                               potential_modulus.to_dict(), target_modulus.to_dict(),
                               evidence, diag)


def _sample_pairs(rng, n_pairs):
    x = rng.random(n_pairs)
    d = np.exp(rng.uniform(math.log(1e-4), math.log(0.5), n_pairs))
    # half of the pairs start next to the neutral point
    near = rng.random(n_pairs) < 0.5
    x = np.where(near, rng.uniform(-0.05, 0.05, n_pairs), x)
    sign = np.where(rng.random(n_pairs) < 0.5, -1.0, 1.0)
    return np.mod(x, 1.0), np.mod(x + sign * d, 1.0)


def _walk(m, potential, x, y, t_max, rng):
    """Birkhoff differences along random words; yields per-step arrays."""
    X, Y = x.copy(), y.copy()
    diff = np.zeros_like(X)
    for t in range(1, t_max + 1):
        letters = rng.integers(0, m.k, size=X.size)
        X, Y = _step(m, X, Y, letters)
        inc = potential(X) - potential(Y)
        diff += inc
        yield t, X, Y, inc, diff


def flatness_empirical(m: MapModel, potential: GridFunction, target_modulus: ModulusSpec,
                       pairs: int = 2_000, words_per_pair: int = 4, t_max: int = 200,
                       seed: int = 0, growth_tol: float = 0.25) -> FlatnessCertificate:
    """Running sup of ``|A^t(x) - A^t(y)| / omega(d(x, y))`` on random pairs and words.

    The potential is refuted when the sup still grows by more than
    ``growth_tol`` (relative) over the second half of the horizon.
    """
    rng = _philox(seed)
    x, y = _sample_pairs(rng, pairs)
    x, y = np.repeat(x, words_per_pair), np.repeat(y, words_per_pair)
    w0 = eval_modulus(target_modulus, circle_distance(x, y))
    sup = 0.0
    trace = []
    for t, _, _, _, diff in _walk(m, potential, x, y, t_max, rng):
        sup = max(sup, float(np.max(np.abs(diff) / w0)))
        trace.append(sup)
    half = trace[len(trace) // 2 - 1] if len(trace) > 1 else trace[0]
    growth = (trace[-1] - half) / half if half > 0 else 0.0
    status = "refuted" if growth > growth_tol else "certified"
    evidence = [{"t": t + 1, "sup_ratio": v} for t, v in enumerate(trace)]
    return FlatnessCertificate("empirical", status, trace[-1], {},
                               target_modulus.to_dict(), evidence,
                               {"second_half_growth": growth, "pairs": pairs,
                                "words_per_pair": words_per_pair, "seed": seed})


def run_majorant(q: float, a: float, gamma: float, r: float, n_terms: int = 10**6) -> float:
    """``sum_n n^(-gamma/q) (a n + r^-q)^(-1/q)``, the run-sum bound for ``|A'| <= C d^gamma``."""
    n = np.arange(1, n_terms + 1, dtype=float)
    head = float(np.sum(n ** (-gamma / q) * (a * n + r ** (-q)) ** (-1.0 / q)))
    # integral tail beyond n_terms
    e = gamma / q + 1.0 / q
    tail = a ** (-1.0 / q) * n_terms ** (1.0 - e) / (e - 1.0) if e > 1 else math.inf
    return head + tail


def flatness_runs(m: MapModel, potential: GridFunction, target_modulus: ModulusSpec,
                  pairs: int = 2_000, words_per_pair: int = 4, t_max: int = 200,
                  seed: int = 0, derivative_bound: Optional[tuple] = None) -> FlatnessCertificate:
    """Flatness from the split into excursions inside and outside the neutral zone.

    Along each paired trajectory, maximal stretches where both points lie
    within ``neutral_radius`` of 0 are runs. Outside runs every step contracts
    the distance by at least the map's neutral threshold ``lam_N``, so the global constant is
    ``max(C_run, Hol(A)) / (1 - lam_N**-alpha)``, with ``C_run`` the largest run
    sum relative to ``omega`` of the distance entering the run. The bound is
    checked against the empirical sup over the same trajectories.

    The potential must be constant on the neutral set unless
    ``derivative_bound = (C, gamma)`` asserts ``|A'(r)| <= C r**gamma`` there.
    """
    from .maps import NEUTRAL_THRESHOLD

    r_n = m.neutral_radius
    if r_n <= 0:
        raise ValueError("flatness_runs needs a map with a neutral set")
    if derivative_bound is None:
        near = potential.values[circle_distance(potential.nodes, 0.0) < r_n]
        if near.size and np.ptp(near) > 1e-9 * (1.0 + np.max(np.abs(near))):
            raise ValueError("potential is not constant on the neutral set; "
                             "pass derivative_bound=(C, gamma)")
    hol = holder_constant(potential, target_modulus)
    rng = _philox(seed)
    x, y = _sample_pairs(rng, pairs)
    x, y = np.repeat(x, words_per_pair), np.repeat(y, words_per_pair)
    w0 = eval_modulus(target_modulus, circle_distance(x, y))
    run_sum = np.zeros_like(x)
    run_scale = np.ones_like(x)
    in_run = np.zeros(x.size, dtype=bool)
    c_run = 0.0
    n_runs = 0
    sup = 0.0
    prev_d = circle_distance(x, y)
    for t, X, Y, inc, diff in _walk(m, potential, x, y, t_max, rng):
        inside = (circle_distance(X, 0.0) < r_n) & (circle_distance(Y, 0.0) < r_n)
        starting = inside & ~in_run
        run_scale = np.where(starting, eval_modulus(target_modulus, prev_d), run_scale)
        run_sum = np.where(starting, 0.0, run_sum)
        run_sum += np.where(inside, inc, 0.0)
        n_runs += int(np.count_nonzero(starting))
        active = inside & (run_scale > 0)
        if np.any(active):
            c_run = max(c_run, float(np.max(np.abs(run_sum[active]) / run_scale[active])))
        in_run = inside
        prev_d = circle_distance(X, Y)
        sup = max(sup, float(np.max(np.abs(diff) / w0)))
    alpha = target_modulus.alpha
    lam_n = m.params.get("neutral_threshold", NEUTRAL_THRESHOLD)
    factor = 1.0 / (1.0 - lam_n ** (-alpha)) if alpha > 0 else math.inf
    constant = max(c_run, hol) * factor
    diag = {"C_run": c_run, "holder": hol, "runs": n_runs, "empirical_sup": sup,
            "neutral_radius": r_n, "factor": factor}
    if derivative_bound is not None and m.contraction().form == "power":
        C, gamma = derivative_bound
        q = m.contraction().params["q"]
        a = _increment(m.contraction(), "power", q, max(r_n, 1e-12))
        diag["run_majorant"] = C * run_majorant(q, a, gamma, max(r_n, 1e-12))
    ok = math.isfinite(constant) and sup <= constant * (1 + 1e-9)
    if derivative_bound is not None:
        ok = ok and math.isfinite(diag.get("run_majorant", math.inf))
    return FlatnessCertificate("runs", "certified" if ok else "refuted", constant, {},
                               target_modulus.to_dict(), [], diag)
