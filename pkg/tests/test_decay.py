import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from rpflab.decay import (DecayModel, DecayTrace, FitError, contraction_bound_check,
                          decay_time, fit_decay, measure_correlation_decay,
                          measure_operator_decay, measure_wasserstein_decay)
from rpflab.grid import GridFunction, circle_distance
from rpflab.kernel import word_sum_operator
from rpflab.maps import ContractionFn, k_fold, pm_log, pomeau_manneville, power_contraction
from rpflab.moduli import choose_r0
from rpflab.rpf import rpf_triple

N = 4096

exp_models = st.builds(lambda C, d: DecayModel("exponential", {"C": C, "delta": d}),
                       st.floats(1.0, 20.0), st.floats(0.01, 0.9))
poly_models = st.builds(lambda B, b, a: DecayModel("polynomial", {"B": B, "b": b, "a": a}),
                        st.floats(1.0, 20.0), st.floats(0.05, 1.0), st.floats(0.2, 3.0))
models = st.one_of(exp_models, poly_models)


@pytest.fixture(scope="module")
def doubling():
    return rpf_triple(k_fold(2), GridFunction(np.zeros(N)))


@pytest.fixture(scope="module")
def pm_data():
    A = GridFunction.from_callable(lambda x: 0.5 * np.cos(2 * np.pi * x), N)
    return rpf_triple(pomeau_manneville(0.5), A)


def test_decay_time_examples():
    halving = DecayModel("exponential", {"C": 1.0, "delta": 0.5})
    assert decay_time(halving, 0.5, 0.3) == 1
    hyperbolic = DecayModel("polynomial", {"B": 1.0, "b": 1.0, "a": 1.0})
    for r in (0.3, 0.07, 0.01, 0.123):
        assert decay_time(hyperbolic, 0.5, r) == math.ceil(1 / r)


def test_exponential_decay_time_ignores_scale():
    model = DecayModel("exponential", {"C": 4.0, "delta": 0.1})
    times = {decay_time(model, 0.25, r) for r in np.geomspace(1e-6, 1, 25)}
    assert len(times) == 1


def test_invalid_models_are_rejected():
    with pytest.raises(ValueError):
        DecayModel("exponential", {"C": 0.5, "delta": 0.1})
    with pytest.raises(ValueError):
        DecayModel("polynomial", {"B": 2.0, "b": 0.0, "a": 1.0})
    with pytest.raises(ValueError):
        DecayModel("stretched", {})


@settings(max_examples=60, deadline=None)
@given(models)
def test_model_axioms(model):
    t = np.arange(0, 60)
    r = np.linspace(0.01, 1.0, 60)
    F = model(t[:, None], r[None, :])
    assert np.all(np.diff(F, axis=0) <= 1e-12)
    assert np.all(np.diff(F, axis=1) >= -1e-12)
    p = model.params
    const = p["C"] if model.form == "exponential" else p["B"] * p["b"] ** (-1 / p["a"])
    assert np.all(F <= const * r[None, :] * (1 + 1e-12))


@settings(max_examples=60, deadline=None)
@given(models, st.integers(0, 30), st.integers(0, 30), st.floats(0.01, 1.0))
def test_composition_law(model, t1, t2, r):
    assert model(t1 + t2, r) <= model(t1, model(t2, r)) * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(models, st.floats(0.05, 0.95), st.floats(0.01, 1.0))
def test_decay_time_is_minimal(model, theta, r):
    t = decay_time(model, theta, r)
    assume(t < 10**7)
    assert model(t, r) <= theta * r
    if t > 0:
        assert model(t - 1, r) > theta * r


def test_exponential_round_trip():
    t = np.arange(1, 41)
    model = fit_decay(DecayTrace(t, 3 * 0.8**t, 1.0), "exponential", t_min=1)
    assert model.params["C"] == pytest.approx(3.0, rel=0.01)
    assert model.params["delta"] == pytest.approx(0.2, rel=0.01)


def test_polynomial_round_trip():
    t = np.arange(10, 1001)
    model = fit_decay(DecayTrace(t, 5.0 / t**2, 1.0), "polynomial")
    # the degree of decay is 1 / a
    assert 1.0 / model.params["a"] == pytest.approx(2.0, rel=0.02)
    assert model.slope_halfwidth < 1e-6


def test_fit_needs_points_above_the_floor():
    t = np.arange(0, 40)
    with pytest.raises(FitError):
        fit_decay(DecayTrace(t, 0.5**t * (t < 10) + 1e-16, 1.0), "exponential")
    with pytest.raises(FitError):
        fit_decay(DecayTrace(t, np.ones(40), 1.0), "exponential")


def test_fit_window_stops_at_the_floor():
    t = np.arange(0, 80)
    vals = np.maximum(0.5**t, 1e-17)
    model = fit_decay(DecayTrace(t, vals, 1.0), "exponential")
    assert model.fit_range[1] < 45
    assert model.params["delta"] == pytest.approx(0.5, rel=1e-9)


def test_contraction_bound_for_hyperbolic_contraction():
    c = ContractionFn("power", {"q": 1.0, "D": 1.0}, power_contraction(1.0, 1.0))
    rep = contraction_bound_check(c, n_max=1000)
    assert rep.a == pytest.approx(1.0, abs=1e-9)
    assert rep.a_step == pytest.approx(1.0, abs=1e-9)
    assert contraction_bound_check(c, n_max=0).passed


def test_contraction_bound_for_pm_half():
    m = pomeau_manneville(0.5)
    rep = contraction_bound_check(m, n_max=2000)
    assert rep.passed and rep.a > 0
    c = m.contraction()
    s = 0.25
    for _ in range(100):
        s = c(s)
    assert s <= (100 * rep.a + 0.25**-0.5) ** -2


@pytest.mark.parametrize("m", [pomeau_manneville(1.0), pm_log(0.5), k_fold(3)])
def test_contraction_bound_other_forms(m):
    assert contraction_bound_check(m, n_max=1000).passed


def test_operator_decay_of_constant_is_zero(pm_data):
    tr = measure_operator_decay(pomeau_manneville(0.5), pm_data, GridFunction(np.full(N, 2.0)), 10)
    assert np.max(tr.values) < 1e-12


def test_lipschitz_observable_under_doubling(doubling):
    # tent functions d(x, c) are flattened in one step, so use d(x, 0)^2
    f = GridFunction.from_callable(lambda x: circle_distance(x, 0.0) ** 2, N)
    tr = measure_operator_decay(k_fold(2), doubling, f, 40)
    model = fit_decay(tr, "exponential", t_min=1)
    assert 1 - model.params["delta"] <= 0.51


def test_operator_decay_with_spectral_gap(pm_data):
    m = pomeau_manneville(0.5)
    f = GridFunction.from_callable(lambda x: np.cos(2 * np.pi * x), N)
    tr = measure_operator_decay(m, pm_data, f, 50, spec=choose_r0(0.2, 0.0))
    model = fit_decay(tr, "exponential", t_min=20)
    assert 1 - model.params["delta"] < 1
    assert len(tr.meta["holder"]) == 51
    assert tr.meta["holder"][-1] < tr.meta["holder"][0]


def test_correlation_of_constant_is_zero(doubling):
    f = GridFunction.from_callable(lambda x: np.cos(2 * np.pi * x), N)
    tr = measure_correlation_decay(k_fold(2), doubling, f, GridFunction(np.ones(N)), 5)
    assert np.max(tr.values) < 1e-14


def test_correlation_of_harmonics_vanishes(doubling):
    f = GridFunction.from_callable(lambda x: np.cos(2 * np.pi * x), N)
    tr = measure_correlation_decay(k_fold(2), doubling, f, f, 6)
    assert tr.values[0] == pytest.approx(0.5, rel=1e-6)
    assert np.max(tr.values[1:]) < 1e-12


def test_correlation_rate_matches_operator_rate(pm_data):
    m = pomeau_manneville(0.5)
    f = GridFunction.from_callable(lambda x: np.cos(2 * np.pi * x), N)
    g = GridFunction.from_callable(lambda x: np.sin(2 * np.pi * x) + 0.3, N)
    op = fit_decay(measure_operator_decay(m, pm_data, f, 150), "exponential", t_min=20)
    cor_tr = measure_correlation_decay(m, pm_data, f, g, 150)
    cor = fit_decay(cor_tr, "exponential", t_min=20)
    assert cor.slope == pytest.approx(op.slope, rel=0.15)
    # correlation <= sup norm of the centred iterate times integral of |g|
    sup = measure_operator_decay(m, pm_data, f, 150).values
    weight = float(np.sum(pm_data.stationary * np.abs(g.values)))
    assert np.all(cor_tr.values <= sup * weight + 1e-15)


def test_wasserstein_trace_of_equal_points():
    tr = measure_wasserstein_decay(k_fold(2), GridFunction(np.zeros(256)), 0.3, 0.3,
                                   choose_r0(1.0, 0.0), 5)
    assert np.all(tr.values == 0)


def test_wasserstein_trace_for_doubling():
    res = 1.0 / 512
    x, y = 0.1, 0.45
    tr = measure_wasserstein_decay(k_fold(2), GridFunction(np.zeros(256)), x, y,
                                   choose_r0(1.0, 0.0), 12, res)
    bound = circle_distance(x, y) * 2.0 ** -tr.t + 2 * res
    assert np.all(tr.values <= bound + 1e-12)


def test_wasserstein_dominates_lipschitz_observables(pm_data):
    m = pomeau_manneville(0.5)
    a = pm_data.normalized_potential
    x, y = 0.2, 0.7
    tr = measure_wasserstein_decay(m, a, x, y, choose_r0(1.0, 0.0), 6, merge_resolution=0)
    f = lambda z: circle_distance(z, 0.3)
    for t in range(7):
        gap = abs(word_sum_operator(m, a, f, x, t)[0] - word_sum_operator(m, a, f, y, t)[0])
        assert gap <= tr.values[t] + 1e-9


def test_trace_csv(tmp_path):
    tr = DecayTrace(np.arange(3), np.array([1.0, 0.5, 0.25]), 1.0)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,value,r" and len(lines) == 4
