import mpmath
import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from gcfprod import ces
from gcfprod.ces import DemandState, StructuralParams

THETA = ces.DEFAULT_THETA
finite = st.floats(-10, 10, allow_nan=False)


def test_log_output_at_origin():
    assert ces.log_output(THETA, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)


@given(finite)
def test_log_output_on_diagonal(c):
    assert ces.log_output(THETA, c, c) == pytest.approx(0.95 * c, abs=1e-12)


def test_log_output_k1_v0_against_high_precision():
    mpmath.mp.dps = 40
    exact = mpmath.mpf("0.95") / -1 * mpmath.log(mpmath.mpf("0.3") * mpmath.e**-1 + mpmath.mpf("0.7"))
    frozen = 0.19975835860125027
    assert float(exact) == pytest.approx(frozen, rel=1e-15)
    assert ces.log_output(THETA, 1.0, 0.0) == pytest.approx(frozen, rel=1e-14)


def test_log_output_stable_for_extreme_arguments():
    th = StructuralParams(0.3, -1.0, 0.95)
    for k, v in [(200, -200), (-200, 200), (-200, -200), (150, 170)]:
        assert np.isfinite(ces.log_output(th, k, v))
        assert np.isfinite(ces.output_elasticity_v(th, k, v))
    th = StructuralParams(0.4, 2.0, 0.9)
    assert np.isfinite(ces.log_output(th, 100, -100))


def test_elasticity_on_diagonal():
    for c in (-3.0, 0.0, 5.0):
        assert ces.output_elasticity_v(THETA, c, c) == pytest.approx(0.665, rel=1e-14)


@settings(max_examples=200)
@given(finite, finite, st.floats(0.05, 0.95), st.floats(-3, -0.1), st.floats(0.3, 1.5))
@example(9.0, -4.0, 0.5, -3.0, 1.0)  # elasticity rounds to exactly nu
def test_elasticity_matches_finite_difference(k, v, alpha, rho, nu):
    th = StructuralParams(alpha, rho, nu)
    h = 1e-5
    fd = (ces.log_output(th, k, v + h) - ces.log_output(th, k, v - h)) / (2 * h)
    el = ces.output_elasticity_v(th, k, v)
    assert el == pytest.approx(fd, rel=1e-6, abs=1e-9)
    assert 0 < el <= nu


def test_elasticity_approaches_nu_when_v_small():
    th = StructuralParams(0.3, -5.0, 0.95)
    vs = np.array([0.0, -0.5, -1.0, -2.0, -4.0])
    el = ces.output_elasticity_v(th, 0.0, vs)
    assert np.all(np.diff(el) > 0)
    assert el[-1] == pytest.approx(0.95, rel=1e-8)


def test_log_elasticity_consistent():
    k, v = np.linspace(-3, 3, 7), np.linspace(2, -2, 7)
    assert np.allclose(np.exp(ces.log_output_elasticity_v(THETA, k, v)),
                       ces.output_elasticity_v(THETA, k, v), rtol=1e-14)


def test_markup_values():
    assert ces.markup(0.0) == 2.0
    assert ces.markup(-1.3543) == pytest.approx(1 + np.exp(-1.3543))
    assert ces.markup(-60.0) == pytest.approx(1.0)
    assert ces.log_markup(-1.3543) == pytest.approx(np.log(1 + np.exp(-1.3543)), rel=1e-14)


@given(st.floats(-30, 30))
def test_markup_exceeds_one(d2):
    assert ces.markup(d2) > 1


def test_inverse_demand_examples():
    # eta = 2 when delta2 = 0
    assert ces.inverse_demand(DemandState(10.0, 0.0), 10.0) == 0.0
    d2 = -np.log(0.25)  # eta = 1.25
    assert ces.inverse_demand(DemandState(10.0, d2), 5.0) == pytest.approx(4.0, rel=1e-14)


@given(st.floats(-20, 30), st.floats(-5, 5), st.floats(-20, 20))
def test_inverse_demand_round_trip(d1, d2, q):
    state = DemandState(d1, d2)
    p = ces.inverse_demand(state, q)
    assert ces.demand(state, p) == pytest.approx(q, abs=1e-12 * max(1, abs(d1), abs(q)))


def test_log_markup_plus_noise():
    assert ces.log_markup_plus_noise(1.0, 2.0, 0.5, 2.5, 1.0) == 0.0
    with pytest.raises(ValueError):
        ces.log_markup_plus_noise(1.0, 2.0, 0.5, 2.5, 0.0)


@pytest.mark.parametrize("kw", [dict(alpha=0.0, rho=-1, nu=1), dict(alpha=1.0, rho=-1, nu=1),
                                dict(alpha=0.3, rho=0.0, nu=1), dict(alpha=0.3, rho=-1, nu=0)])
def test_invalid_params_rejected(kw):
    with pytest.raises(ValueError):
        StructuralParams(**kw)
