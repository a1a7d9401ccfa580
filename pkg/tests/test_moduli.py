import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpflab.grid import GridFunction, circle_distance
from rpflab.moduli import ModulusSpec, choose_r0, eval_modulus, half_ratio, holder_constant

DENSE = np.linspace(0.0, 1.0, 10_001)

admissible = st.one_of(
    st.tuples(st.floats(0.05, 0.95), st.floats(-2.0, 3.0)),
    st.tuples(st.just(0.0), st.floats(0.2, 3.0)),
    st.tuples(st.just(1.0), st.just(0.0)),
)


def test_power_modulus_ignores_r0():
    spec = choose_r0(0.5, 0.0)
    assert spec(0.25) == pytest.approx(0.5, abs=1e-15)
    other = ModulusSpec(0.5, 0.0, 100.0)
    assert other(0.25) == pytest.approx(0.5, abs=1e-15)


def test_log_modulus_is_increasing_and_concave():
    spec = choose_r0(0.0, 2.0)
    w = spec(DENSE)
    assert w[0] == 0.0
    assert np.all(np.diff(w) > 0)
    mid = spec((DENSE[:-2] + DENSE[2:]) / 2)
    assert np.all(mid >= (w[:-2] + w[2:]) / 2 - 1e-12)


@pytest.mark.parametrize("alpha,beta", [(0.0, -1.0), (0.0, 0.0), (1.2, 0.0), (-0.1, 1.0)])
def test_inadmissible_pairs_are_rejected(alpha, beta):
    with pytest.raises(ValueError):
        choose_r0(alpha, beta)


def test_r0_is_a_power_of_e():
    spec = choose_r0(0.3, 2.0)
    m = math.log(spec.r0)
    assert m == pytest.approx(round(m))
    assert m >= 1


def test_linear_extension_beyond_the_clip():
    spec = choose_r0(0.5, 0.0)
    # slope of r^0.5 at 1 is 0.5
    assert spec(1.5) == pytest.approx(1.25)


@settings(max_examples=40, deadline=None)
@given(admissible)
def test_chosen_modulus_invariants(pair):
    spec = choose_r0(*pair)
    w = spec(DENSE)
    assert w[0] == 0.0
    assert np.all(np.diff(w) > 0)
    mid = spec((DENSE[:-2] + DENSE[2:]) / 2)
    assert np.all(mid >= (w[:-2] + w[2:]) / 2 - 1e-12)
    if spec.alpha > 0:
        theta = half_ratio(spec)
        assert theta < 1
        r = DENSE[1:]
        assert np.all(spec(r / 2) <= theta * spec(r) * (1 + 1e-12))


def test_half_ratio_rejects_pure_log():
    with pytest.raises(ValueError):
        half_ratio(choose_r0(0.0, 1.0))


def test_half_ratio_of_pure_power():
    assert half_ratio(choose_r0(0.5, 0.0)) == pytest.approx(2 ** -0.5)


def test_asymptotics_along_dyadic_radii():
    # omega(2^-j) * (j log 2)^beta / 2^(-j alpha) creeps up to 1
    spec = choose_r0(0.4, 1.5)
    j = np.array([10, 40, 160, 640])
    r = 2.0 ** -j
    ratio = spec(r) / (r**0.4 / (j * math.log(2)) ** 1.5)
    assert np.all(np.diff(ratio) > 0)
    assert ratio[-1] == pytest.approx(1.0, rel=0.02)
    assert ratio[-1] <= 1.0


def test_holder_constant_of_distance_is_one():
    f = GridFunction.from_callable(lambda x: circle_distance(x, 0.0), 1024)
    assert holder_constant(f, choose_r0(1.0, 0.0)) == pytest.approx(1.0, abs=1e-12)


def test_holder_constant_of_constant_is_zero():
    f = GridFunction(np.full(256, 3.0))
    assert holder_constant(f, choose_r0(0.5, 0.0)) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
def test_holder_constant_is_subadditive_and_homogeneous(seed, alpha):
    rng = np.random.default_rng(seed)
    spec = choose_r0(alpha, 0.0)
    f = rng.standard_normal(128)
    g = rng.standard_normal(128)
    hf, hg = holder_constant(f, spec), holder_constant(g, spec)
    assert holder_constant(f + g, spec) <= hf + hg + 1e-12
    assert holder_constant(3.0 * f, spec) == pytest.approx(3.0 * hf)


def test_eval_modulus_vectorises_and_handles_zero():
    spec = choose_r0(0.0, 1.0)
    out = eval_modulus(spec, np.array([0.0, 1e-300, 0.5]))
    assert out[0] == 0.0
    assert np.all(np.isfinite(out))
