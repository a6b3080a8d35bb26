import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nlreg.errors import ClassViolationError, ResolutionError
from nlreg.grid import Box, GridFunction, ZeroTail, make_grid, modulus_of, sup_distance
from nlreg.kernels import (bump_kernel, check_ellipticity, modulated_power_kernel, power_kernel,
                           table_kernel)
from nlreg.mollify import make_cutoff, make_mollifier, mollify_function, mollify_kernel, psi
from tests.oracles import bump

EPS = [2.0 ** -k for k in range(2, 6)]


@pytest.mark.parametrize("eps", [1.0, 0.3, 0.05])
def test_mollifier_unit_mass_and_support(eps):
    phi = make_mollifier(eps)
    mass = integrate.quad(lambda x: float(phi(np.array([x]))[0]), -eps, eps, epsabs=1e-14, epsrel=1e-12)[0]
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert np.all(phi(np.array([eps, -eps, 1.5 * eps])) == 0.0)


def test_mollifier_2d_mass():
    phi = make_mollifier(0.5, 2)
    mass = integrate.dblquad(lambda y, x: float(phi(np.array([x, y]))), -0.5, 0.5, -0.5, 0.5,
                             epsabs=1e-12)[0]
    assert mass == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("n", [1, 2])
def test_mollifier_scaling(n):
    z = np.zeros(n) if n == 2 else np.array(0.0)
    assert make_mollifier(0.5, n)(z) / make_mollifier(1.0, n)(z) == pytest.approx(2.0 ** n)


def test_cutoff_values():
    assert psi(0.25) == 1.0 and psi(0.5) == 1.0 and psi(2.0) == 0.0 and psi(1.0) == 0.0
    assert 0.0 < psi(0.6) < 1.0 and psi(0.6) >= psi(0.9)
    r = np.linspace(0, 2, 401)
    assert np.all(np.diff(make_cutoff()(r)) <= 0.0)


def test_unit_power_is_fixed():
    K = power_kernel(1, 0.5, 1.0, 0.5, 2.0)
    assert mollify_kernel(K, 0.1) is K


@pytest.mark.parametrize("eps", EPS)
def test_implanted_power_near_origin(eps):
    s = 0.4
    K = modulated_power_kernel(1, s, 2.0, 1.0, 1.0, 1.0, 3.0)
    Ke = mollify_kernel(K, eps)
    x = np.linspace(-2, 2, 9)[:, None]
    y = np.linspace(-eps / 2, eps / 2, 11)
    y = y[y != 0]
    assert np.array_equal(Ke.eval(x, y[None, :]), np.broadcast_to(np.abs(y) ** (-1 - 2 * s), (9, y.size)))
    assert Ke.eval(0.3, eps / 4) == (eps / 4) ** (-1 - 2 * s)


def test_translation_invariant_kernel_unchanged_far_out():
    eps = 0.1
    K = bump_kernel(1, 0.5, 1.0, 1.0, 1.0, 0.25, 0.5, 2.0)
    Ke = mollify_kernel(K, eps)
    y = np.linspace(eps, 3.0, 50)
    assert np.allclose(Ke.eval(0.7, y), K.eval(0.7, y), rtol=1e-14, atol=0)


@pytest.mark.parametrize("eps", [0.25, 0.0625])
def test_sin_modulated_at_twice_eps(eps):
    s = 0.5
    Ke = mollify_kernel(modulated_power_kernel(1, s, 2.0, 1.0, 1.0, 1.0, 3.0), eps)
    y = 2 * eps
    # (sin * phi_eps)(0) = 0 because phi_eps is even
    assert Ke.eval(0.0, y) == pytest.approx(2.0 * y ** (-1 - 2 * s), rel=1e-13)


@pytest.mark.parametrize("eps", [0.25, 0.0625])
def test_outer_part_is_x_convolution(eps):
    s, freq = 0.5, 3.0
    Ke = mollify_kernel(modulated_power_kernel(1, s, 2.0, 1.0, freq, 0.5, 4.0), eps)
    mass = integrate.quad(bump, -1, 1, epsabs=1e-14)[0]
    for x in (-0.8, 0.1, 0.9):
        m = integrate.quad(lambda z: (2 + np.sin(freq * (x - z))) * bump(np.array([z / eps]))[0] / (mass * eps),
                           -eps, eps, epsabs=1e-14, epsrel=1e-13)[0]
        for y in (eps, 1.7 * eps, 3.0):
            assert Ke.eval(x, y) == pytest.approx(m * y ** (-1 - 2 * s), rel=1e-5)


def test_class_violation():
    with pytest.raises(ClassViolationError):
        mollify_kernel(power_kernel(1, 0.5, 2.0, 1.5, 3.0), 0.1)
    with pytest.raises(ClassViolationError):
        mollify_kernel(power_kernel(1, 0.5, 0.5, 0.25, 0.8), 0.1)


KERNELS = [
    modulated_power_kernel(1, 0.3, 2.0, 1.0, 1.0, 1.0, 3.0),
    modulated_power_kernel(1, 0.7, 1.0, 0.4, 5.0, 0.5, 2.0),
    bump_kernel(1, 0.5, 1.0, -0.5, 0.5, 0.2, 0.4, 1.5),
    table_kernel(1, 0.6, [0.1, 1.0, 3.0], [0.6, 1.8, 1.2], 0.5, 2.0),
]


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(range(len(KERNELS))), st.floats(0.01, 0.5))
def test_mollified_kernel_symmetric_and_elliptic(k, eps):
    K = KERNELS[k]
    Ke = mollify_kernel(K, eps)
    rep = check_ellipticity(Ke, 400, seed=k)
    assert rep.passed and rep.symmetric
    assert Ke.params == K.params


def _grid_fn(spec, fn):
    return GridFunction.sample(spec, fn, ZeroTail())


def test_mollify_zero_and_resolution():
    spec = make_grid(1, 1, 4, 1 / 64)
    out = mollify_function(GridFunction.zeros(spec), 0.1)
    assert np.all(out.values == 0.0)
    with pytest.raises(ResolutionError):
        mollify_function(GridFunction.zeros(spec), 1 / 64)


def test_mollify_truncated_constant():
    spec = make_grid(1, 1, 4, 1 / 64)
    eps, R = 0.25, 2.0
    out = mollify_function(GridFunction.constant(spec, 1.0), eps, R)
    inner = np.abs(spec.axis) < R - eps
    assert np.allclose(out.values[inner], 1.0, atol=1e-14)
    assert np.all(out.values[np.abs(spec.axis) >= R + eps] == 0.0)


def test_mollify_reproduces_linear_functions():
    spec = make_grid(1, 1, 4, 1 / 64)
    out = mollify_function(_grid_fn(spec, lambda x: x), 0.2)
    inner = np.abs(spec.axis) < 4 - 0.2
    assert np.allclose(out.values[inner], spec.axis[inner], atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-3, 3), st.sampled_from([0.05, 0.1, 0.3]))
def test_mollify_linear_and_nonexpansive(seed, a, eps):
    spec = make_grid(1, 1, 2, 1 / 64)
    rng = np.random.default_rng(seed)
    u = GridFunction(spec, rng.normal(size=spec.size))
    v = GridFunction(spec, rng.normal(size=spec.size))
    mu, mv = mollify_function(u, eps), mollify_function(v, eps)
    muv = mollify_function(u * a + v, eps)
    assert np.allclose(muv.values, a * mu.values + mv.values, atol=1e-12)
    assert mu.sup_norm() <= u.sup_norm() + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(-20, 20))
def test_mollify_commutes_with_grid_translation(k):
    spec = make_grid(1, 1, 4, 1 / 32)
    eps = 0.2
    u = _grid_fn(spec, lambda x: bump(x / 0.8))
    uk = GridFunction(spec, np.roll(u.values, k))
    a = np.roll(mollify_function(u, eps).values, k)
    b = mollify_function(uk, eps).values
    assert np.allclose(a, b, atol=1e-15)


def test_mollify_error_below_modulus():
    spec = make_grid(1, 1, 4, 1 / 256)
    u = _grid_fn(spec, lambda x: np.maximum(1 - np.abs(x), 0.0) ** 0.5)
    w = modulus_of(u)
    errs = []
    for eps in EPS:
        e = sup_distance(mollify_function(u, eps), u, Box.ball(1.0))
        errs.append(e)
        assert e <= 2 * float(w(eps))
    assert all(b < a for a, b in zip(errs[:-1], errs[1:]))
