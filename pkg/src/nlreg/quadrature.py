"""Radial moment integrals used by the nonlocal discretization.

The 1D scheme interpolates ``g(y) = delta^2 u(y) / y^2`` piecewise linearly between the
nodes ``y = jh`` (constant ``g = D^2_h u`` on ``[0, h]``), so the weight of node ``j`` is

    W_j = (jh)^{-2} * int hat_j(y) y^2 K(y) dy

and everything beyond ``R_far = Jh`` is handled by the tail mass ``int_{R_far}^inf K``.
Radial profiles are written as ``K(y) = ratio(y) |y|^{-1-2s}``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import QuadratureError

GL_CELL = 6
GL_DYADIC_LEVELS = 48


@lru_cache(maxsize=None)
def gauss_legendre(k: int):
    x, w = np.polynomial.legendre.leggauss(k)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _pow_int(a, b, q):
    """int_a^b y^q dy for q != -1."""
    return (b ** (q + 1) - a ** (q + 1)) / (q + 1)


def power_hat_weights(s: float, h: float, J: int) -> np.ndarray:
    """Closed-form weights for the unit power kernel ``|y|^{-1-2s}``."""
    p = 1.0 - 2.0 * s
    j = np.arange(1, J + 1, dtype=float)
    a, c, b = (j - 1) * h, j * h, (j + 1) * h
    left = _pow_int(a, c, p + 1) / h - (j - 1) * _pow_int(a, c, p)
    right = (j + 1) * _pow_int(c, b, p) - _pow_int(c, b, p + 1) / h
    W = left + right
    W[0] = h ** (p + 1) / (p + 1) + right[0]
    W[-1] = left[-1]
    return W / (j * h) ** 2


def power_tail_mass(s: float, R: float) -> float:
    """int_R^inf y^{-1-2s} dy."""
    return R ** (-2.0 * s) / (2.0 * s)


def hat_weights(ratio, s: float, h: float, J: int) -> np.ndarray:
    """Weights for ``K(y) = ratio(y) y^{-1-2s}`` by Gauss-Legendre on every cell.

    ``ratio`` maps an array of radii to an array of the same shape.
    """
    p = 1.0 - 2.0 * s
    t, w = gauss_legendre(GL_CELL)
    k = np.arange(0, J, dtype=float)[:, None]  # cell [kh, (k+1)h]
    y = (k + 0.5 * (t + 1.0)) * h
    f = y ** p * ratio(y) * (0.5 * h) * w
    rise = np.sum(f * (y / h - k), axis=1)       # hat_{k+1} restricted to the cell
    fall = np.sum(f * ((k + 1) - y / h), axis=1)  # hat_k restricted to the cell
    rise[0] = 0.0  # on [0, h] g is frozen at g_1, see inner_moment
    W = np.zeros(J)
    W += rise
    W[:-1] += fall[1:]
    W[0] += inner_moment(ratio, s, h)
    j = np.arange(1, J + 1, dtype=float)
    return W / (j * h) ** 2


def inner_moment(ratio, s: float, h: float) -> float:
    """int_0^h y^2 K(y) dy on dyadic shells (the integrand is O(y^{1-2s}))."""
    p = 1.0 - 2.0 * s
    t, w = gauss_legendre(GL_CELL)
    lev = 2.0 ** -np.arange(GL_DYADIC_LEVELS, dtype=float)[:, None]
    a, b = 0.5 * lev * h, lev * h
    y = a + 0.5 * (t + 1.0) * (b - a)
    total = float(np.sum(y ** p * ratio(y) * 0.5 * (b - a) * w))
    # remainder below the last shell treated with the ratio frozen at its value there
    r_min = float(a[-1, 0])
    total += float(ratio(np.array([r_min]))[0]) * r_min ** (p + 1) / (p + 1)
    return total


def tail_mass(ratio, s: float, R: float, settle: float, ratio_inf: float) -> float:
    """int_R^inf ratio(y) y^{-1-2s} dy where ``ratio`` equals ``ratio_inf`` beyond ``settle``."""
    if R >= settle:
        return ratio_inf * power_tail_mass(s, R)
    val, err = integrate.quad(lambda y: float(ratio(np.array([y]))[0]) * y ** (-1 - 2 * s),
                              R, settle, limit=400)
    if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
        raise QuadratureError(f"tail integral did not converge (estimate {val}, error {err})")
    return val + ratio_inf * power_tail_mass(s, settle)


def composite_gl(a: float, b: float, pieces: int, k: int = GL_CELL):
    """Nodes and weights of composite Gauss-Legendre on [a, b] with equal pieces."""
    t, w = gauss_legendre(k)
    edges = np.linspace(a, b, pieces + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    y = lo + 0.5 * (t + 1.0) * (hi - lo)
    ww = 0.5 * (hi - lo) * w
    return y.ravel(), ww.ravel()


def adaptive_gl(f, a: float, b: float, rtol: float = 1e-6, atol: float = 1e-14,
                k: int = 8, max_doublings: int = 14) -> float:
    """Composite GL with piece doubling until the relative change is below ``rtol``.

    ``f`` is vectorized over its argument.
    """
    prev = None
    pieces = 1
    hist = []
    for _ in range(max_doublings):
        y, w = composite_gl(a, b, pieces, k)
        val = float(np.sum(f(y) * w))
        if not np.isfinite(val):
            raise QuadratureError("non-finite integrand value")
        hist.append(val)
        if prev is not None and abs(val - prev) <= rtol * abs(val) + atol:
            return val
        prev = val
        pieces *= 2
    raise QuadratureError(f"annulus quadrature did not settle (last estimates {hist[-3:]})")
