import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlreg.errors import QuadratureError
from nlreg.quadrature import (adaptive_gl, composite_gl, gauss_legendre, hat_weights,
                              inner_moment, power_hat_weights, power_tail_mass, tail_mass)


@pytest.mark.parametrize("k", [2, 6, 16])
def test_gauss_legendre_exact_on_polynomials(k):
    t, w = gauss_legendre(k)
    for deg in range(2 * k):
        exact = (1 - (-1) ** (deg + 1)) / (deg + 1)
        assert np.sum(w * t ** deg) == pytest.approx(exact, abs=1e-13)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_cellwise_gl_matches_closed_form_power_weights(s):
    h, J = 1 / 64, 300
    W_gl = hat_weights(lambda r: np.ones_like(r), s, h, J)
    W_cf = power_hat_weights(s, h, J)
    assert np.max(np.abs(W_gl / W_cf - 1)) < 1e-9


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_weights_reproduce_quadratic_moment(s):
    # for u = y^2, delta^2 u / y^2 = 2 is constant, so sum W_j * 2 (jh)^2 = 2 int_0^{Jh} y^{1-2s}
    h, J = 1 / 32, 128
    W = power_hat_weights(s, h, J)
    lhs = np.sum(W * (np.arange(1, J + 1) * h) ** 2)
    assert lhs == pytest.approx((J * h) ** (2 - 2 * s) / (2 - 2 * s), rel=1e-12)


def test_power_tail_mass():
    # int_2^inf y^{-2} dy = 1/2
    assert power_tail_mass(0.5, 2.0) == pytest.approx(0.5)
    assert tail_mass(lambda r: np.ones_like(r), 0.5, 2.0, 2.0, 1.0) == pytest.approx(0.5, rel=1e-10)
    # ratio 2 on [2, 3] and 1 beyond: 2 (1/2 - 1/3) + 1/3
    two_then_one = lambda r: np.where(r < 3.0, 2.0, 1.0)
    assert tail_mass(two_then_one, 0.5, 2.0, 3.0, 1.0) == pytest.approx(2 / 3, rel=1e-8)


def test_inner_moment_power():
    s, h = 0.4, 0.01
    assert inner_moment(lambda r: np.ones_like(r), s, h) == pytest.approx(h ** (2 - 2 * s) / (2 - 2 * s), rel=1e-10)


def test_composite_gl_integrates_cubic():
    y, w = composite_gl(0.0, 3.0, 5, 2)
    assert np.sum(w * y ** 3) == pytest.approx(81 / 4, rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.5, 4.0))
def test_adaptive_gl_smooth(a, length):
    val = adaptive_gl(np.exp, a, a + length, rtol=1e-12)
    assert val == pytest.approx(np.exp(a + length) - np.exp(a), rel=1e-10)


def test_adaptive_gl_reports_failure():
    with pytest.raises(QuadratureError):
        adaptive_gl(lambda y: np.sign(np.sin(1e6 * y)), 0.0, 1.0, rtol=1e-14, max_doublings=4)
