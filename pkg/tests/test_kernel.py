import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpflab.grid import GridFunction, circle_distance
from rpflab.kernel import (coupled_trajectory, coupling_cost, flatness_empirical,
                           flatness_runs, flatness_series, natural_pairing, run_majorant)
from rpflab.maps import (ContractionFn, k_fold, linear_contraction, pm_log,
                         pomeau_manneville, tabulated_map)
from rpflab.moduli import choose_r0, holder_constant
from rpflab.rpf import rpf_triple

LIP = choose_r0(1.0, 0.0)


def isometric_branch_map():
    # branch 0 is an isometry, branch 1 halves distances
    y = np.linspace(0, 1, 33)
    return tabulated_map(y, [y, y / 2 + 0.25], 2.0, {"form": "linear", "lambda": 1.0},
                         contracted_branch=1)


def test_pairing_without_crossing_is_identity():
    p = natural_pairing(pomeau_manneville(0.5), 0.2, 0.4)
    assert p.eta == (0, 1) and p.sigma == (0, 1)
    assert not p.crosses_zero


def test_pairing_through_zero_is_crossed():
    m = pomeau_manneville(0.5)
    p = natural_pairing(m, 0.1, 0.9)
    assert p.crosses_zero
    # pair j joins x-branch eta[j] with y-branch sigma[j]
    assert set(zip(p.eta, p.sigma)) == {(0, 1), (1, 0)}


def test_pairing_of_equal_points():
    m = pomeau_manneville(1.0)
    p = natural_pairing(m, 0.3, 0.3)
    assert p.eta == p.sigma
    assert coupling_cost(m, 0.3, 0.3, 5, LIP).value == 0.0


def test_empty_word():
    tr = coupled_trajectory(k_fold(2), 0.1, 0.2, [], GridFunction(np.ones(64)))
    assert tr.x.size == 1
    assert tr.A_x[-1] == 0.0 and tr.A_y[-1] == 0.0


def test_halving_word_example():
    tr = coupled_trajectory(k_fold(2), 0.0, 0.5, [1, 1, 1])
    assert tr.distance[-1] == pytest.approx(0.0625, abs=1e-15)


def test_constant_potential_has_equal_birkhoff_sums():
    A = GridFunction(np.full(128, 0.7))
    tr = coupled_trajectory(pomeau_manneville(0.5), 0.05, 0.93, [0, 1, 1, 0, 0, 1, 0], A)
    assert tr.A_x[-1] == pytest.approx(tr.A_y[-1], abs=1e-15)


def test_bad_letters_are_rejected():
    with pytest.raises(ValueError):
        coupled_trajectory(k_fold(2), 0.1, 0.2, [2])


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True),
       st.lists(st.integers(0, 1), min_size=1, max_size=25),
       st.sampled_from(["pm0.5", "pm1.5", "pmlog1", "k2"]))
def test_coupled_distance_follows_contraction(x, y, word, name):
    m = {"pm0.5": pomeau_manneville(0.5), "pm1.5": pomeau_manneville(1.5),
         "pmlog1": pm_log(1.0), "k2": k_fold(2)}[name]
    c = m.contraction()
    tr = coupled_trajectory(m, x, y, word)
    bound = float(circle_distance(x, y))
    for n in range(1, len(word) + 1):
        bound = c(bound)
        assert tr.distance[n] <= bound + 1e-10
    if c.form == "linear":
        assert np.all(np.diff(tr.distance) <= 1e-15)


@pytest.mark.parametrize("t", [0, 1, 5, 10])
def test_k_fold_cost_closed_form(t):
    x, y = 0.13, 0.58
    est = coupling_cost(k_fold(2), x, y, t, LIP)
    assert est.value == pytest.approx(circle_distance(x, y) * 2.0**-t, rel=1e-13)
    assert est.n_words == 2**t


def test_one_contracting_branch_gives_three_quarters():
    m = isometric_branch_map()
    for t in (1, 3, 8):
        est = coupling_cost(m, 0.2, 0.4, t, LIP)
        assert est.value == pytest.approx(0.2 * 0.75**t, abs=1e-10)


def test_word_count_identity():
    # distances after t steps are d/2^n with multiplicity binom(t, n)
    m = isometric_branch_map()
    t, d = 6, 0.2
    counts = Counter()
    for word in itertools.product(range(2), repeat=t):
        tr = coupled_trajectory(m, 0.2, 0.4, word)
        counts[round(math.log2(d / tr.distance[-1]))] += 1
    assert counts == {n: math.comb(t, n) for n in range(t + 1)}
    binomial = sum(math.comb(t, n) * d * 2.0**-n for n in range(t + 1)) / 2**t
    assert coupling_cost(m, 0.2, 0.4, t, LIP).value == pytest.approx(binomial, abs=1e-12)


@pytest.mark.parametrize("t", [4, 10])
def test_sampled_cost_agrees_with_exhaustive(t):
    m = pomeau_manneville(0.5)
    spec = choose_r0(0.5, 0.0)
    exact = coupling_cost(m, 0.07, 0.81, t, spec).value
    est = coupling_cost(m, 0.07, 0.81, t, spec, mode="sampled", n_samples=20_000, seed=4)
    assert abs(est.value - exact) <= 3 * est.stderr
    again = coupling_cost(m, 0.07, 0.81, t, spec, mode="sampled", n_samples=20_000, seed=4)
    assert again == est


def test_exhaustive_cap():
    with pytest.raises(ValueError):
        coupling_cost(k_fold(2), 0.1, 0.2, 21, LIP)
    with pytest.raises(ValueError):
        coupling_cost(k_fold(3), 0.1, 0.2, 13, LIP)


@pytest.mark.parametrize("alpha", [1.0, 0.5])
def test_series_for_halving_contraction(alpha):
    c = ContractionFn("linear", {"lambda": 2.0}, linear_contraction(2.0))
    spec = choose_r0(alpha, 0.0)
    cert = flatness_series(c, spec, spec, r_grid=2.0 ** -np.arange(1, 9), tail_rtol=1e-10)
    assert cert.passed
    assert cert.constant == pytest.approx(1.0 / (2**alpha - 1), rel=1e-8)


def test_series_certifies_above_the_boundary():
    m = pomeau_manneville(0.5)
    cert = flatness_series(m, choose_r0(0.75, 0.0), choose_r0(0.2, 0.0))
    assert cert.status == "certified"
    assert math.isfinite(cert.constant)
    rows = cert.evidence
    bound = [(row["partial_sum"] + row["tail"]) / row["r"] ** 0.25 for row in rows]
    assert max(bound) < 10 * min(bound)
    for row in rows:
        assert row["partial_sum"] + row["tail"] <= cert.constant * row["omega"] * (1 + 1e-12)


def test_series_refutes_below_the_boundary():
    m = pomeau_manneville(0.5)
    cert = flatness_series(m, choose_r0(0.3, 0.0), choose_r0(0.2, 0.0), n_max=20_000)
    assert cert.status == "refuted"
    hist = cert.diagnostics["partial_sum_history"]
    # partial sums keep growing like n^(1 - gamma/q)
    assert hist[-1][1] > 1.5 * hist[len(hist) // 4][1]


def test_empirical_constant_potential():
    cert = flatness_empirical(pomeau_manneville(0.5), GridFunction(np.full(256, 2.0)),
                              choose_r0(0.5, 0.0), pairs=200, t_max=40)
    assert cert.constant == 0.0
    assert cert.passed


def test_empirical_lipschitz_on_doubling():
    A = GridFunction.from_callable(lambda x: 0.3 * np.cos(2 * np.pi * x), 4096)
    hol = holder_constant(A, LIP)
    cert = flatness_empirical(k_fold(2), A, LIP, pairs=500, t_max=60, seed=3)
    assert cert.passed
    assert all(row["sup_ratio"] <= 2 * hol for row in cert.evidence)


def smooth_power_bump(x, gamma=1.7, width=0.2):
    d = circle_distance(x, 0.0)
    cut = np.where(d < width, np.cos(np.pi * d / (2 * width)) ** 2, 0.0)
    return d**gamma * cut


def test_empirical_flat_near_strong_neutral_point():
    A = GridFunction.from_callable(smooth_power_bump, 4096)
    cert = flatness_empirical(pomeau_manneville(1.5), A, LIP, pairs=300, t_max=50, seed=1)
    assert cert.passed
    assert math.isfinite(cert.constant)


def test_runs_with_potential_constant_near_zero():
    m = pomeau_manneville(1.0)
    A = GridFunction.from_callable(
        lambda x: np.where(circle_distance(x, 0.0) < 0.05, 1.0,
                           1.0 + np.sqrt(np.maximum(circle_distance(x, 0.0) - 0.05, 0.0))),
        2048)
    spec = choose_r0(0.5, 0.0)
    cert = flatness_runs(m, A, spec, pairs=300, t_max=80)
    assert cert.diagnostics["C_run"] == 0.0
    factor = 1.0 / (1.0 - 1.05**-0.5)
    assert cert.constant == pytest.approx(holder_constant(A, spec) * factor)
    assert cert.passed


def test_runs_rejects_non_constant_potential_without_bound():
    A = GridFunction.from_callable(lambda x: np.cos(2 * np.pi * x), 1024)
    with pytest.raises(ValueError):
        flatness_runs(pomeau_manneville(1.0), A, LIP, pairs=10, t_max=5)
    with pytest.raises(ValueError):
        flatness_runs(k_fold(2), GridFunction(np.zeros(64)), LIP, pairs=10, t_max=5)


def test_runs_with_derivative_bound():
    m = pomeau_manneville(1.5)
    A = GridFunction.from_callable(smooth_power_bump, 4096)
    cert = flatness_runs(m, A, LIP, pairs=300, t_max=60, derivative_bound=(3.0, 1.7))
    assert math.isfinite(cert.diagnostics["run_majorant"])
    assert cert.passed


def test_run_majorant_converges_only_above_q():
    assert math.isfinite(run_majorant(1.5, 0.5, 1.7, 0.01, n_terms=10**4))
    assert run_majorant(1.5, 0.5, 0.4, 0.01, n_terms=10**4) == math.inf


def test_normalised_potential_stays_flat():
    m = pomeau_manneville(0.5)
    A = GridFunction.from_callable(lambda x: 0.5 * np.cos(2 * np.pi * x), 4096)
    spec = choose_r0(0.2, 0.0)
    data = rpf_triple(m, A)
    cert_a = flatness_empirical(m, A, spec, pairs=300, t_max=60, seed=2)
    cert_n = flatness_empirical(m, data.normalized_potential, spec, pairs=300, t_max=60, seed=2)
    log_h = GridFunction(np.log(data.h.values))
    assert cert_n.constant <= cert_a.constant + 2 * holder_constant(log_h, spec) + 0.05
