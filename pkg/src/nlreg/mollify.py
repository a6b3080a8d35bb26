"""Cutoff, mollifiers, kernel mollification with implanted power singularity, and
mollification of grid functions."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, ndimage

from .errors import (ClassViolationError, ConfigurationError, ResolutionError,
                     UnsupportedDimensionError, UnsupportedTailError)
from .grid import AnalyticTail, ConstantTail, GridFunction, ZeroTail, tail_support
from .kernels import BlendProfile, Kernel, PowerProfile, bump_profile_fn, check_ellipticity
from .quadrature import gauss_legendre

GL_MOLLIFY = 16


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, float), 0.0, 1.0)
    out = np.zeros(t.shape)
    out[t >= 1.0] = 1.0
    m = (t > 0.0) & (t < 1.0)
    a = np.exp(-1.0 / t[m])
    b = np.exp(-1.0 / (1.0 - t[m]))
    out[m] = a / (a + b)
    return out


def psi(r):
    """Fixed radial cutoff: 1 on [0, 1/2], 0 on [1, inf), smooth and nonincreasing."""
    return 1.0 - _smooth_step(2.0 * np.asarray(r, float) - 1.0)


@dataclass(frozen=True)
class Cutoff:
    def __call__(self, r):
        return psi(r)


def make_cutoff() -> Cutoff:
    return Cutoff()


@lru_cache(maxsize=None)
def bump_mass(n: int) -> float:
    """Integral over the unit ball of the unnormalized bump."""
    f = lambda r: float(bump_profile_fn(np.array([r]))[0])
    if n == 1:
        return 2.0 * integrate.quad(f, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)[0]
    if n == 2:
        return 2.0 * np.pi * integrate.quad(lambda r: r * f(r), 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)[0]
    raise UnsupportedDimensionError(f"n={n}")


@dataclass(frozen=True)
class Mollifier:
    epsilon: float
    n: int = 1

    @property
    def normalization(self) -> float:
        return bump_mass(self.n)

    def __call__(self, x):
        x = np.asarray(x, float)
        r = np.abs(x) if self.n == 1 else np.linalg.norm(x, axis=-1)
        return bump_profile_fn(r / self.epsilon) / (self.normalization * self.epsilon ** self.n)

    def gl_rule(self):
        """Nodes (offsets) and unit-mass weights of the GL rule against ``phi_eps``."""
        return _gl_rule(self.n, self.epsilon)


@lru_cache(maxsize=64)
def _gl_rule(n: int, eps: float):
    t, w = gauss_legendre(GL_MOLLIFY)
    if n == 1:
        pts, ww = t, w * bump_profile_fn(t)
    else:
        T1, T2 = np.meshgrid(t, t, indexing="ij")
        pts = np.stack([T1.ravel(), T2.ravel()], axis=-1)
        ww = np.outer(w, w).ravel() * bump_profile_fn(np.linalg.norm(pts, axis=-1))
        keep = ww > 0
        pts, ww = pts[keep], ww[keep]
    return eps * pts, ww / ww.sum()


def make_mollifier(eps: float, n: int = 1) -> Mollifier:
    if not eps > 0:
        raise ConfigurationError("epsilon must be positive")
    if n not in (1, 2):
        raise UnsupportedDimensionError(f"n={n}")
    return Mollifier(float(eps), n)


def convolve_callable(fn, eps: float, n: int = 1):
    """``x -> (fn * phi_eps)(x)`` by the GL rule; weights are nonnegative with unit sum,
    so bounds of ``fn`` carry over exactly."""
    off, ww = _gl_rule(n, float(eps))

    def smoothed(x):
        x = np.asarray(x, float)
        if n == 1:
            vals = fn(x[..., None] - off)
        else:
            vals = fn(x[..., None, :] - off)
        return np.sum(vals * ww, axis=-1)

    return smoothed


# ----------------------------------------------------------------------------- kernels

def mollify_kernel(K: Kernel, eps: float, check_samples: int = 200) -> Kernel:
    """Mollify ``K`` in x at scale ``eps`` and implant ``|y|^{-n-2s}`` near the origin.

    The unit power kernel is returned unchanged.
    """
    if not eps > 0:
        raise ConfigurationError("epsilon must be positive")
    p = K.params
    if p.lam > 1.0 or p.Lam < 1.0:
        raise ClassViolationError(
            f"implanting |y|^(-n-2s) needs lambda <= 1 <= Lambda (got {p.lam}, {p.Lam})")
    if K.is_unit_power:
        return K
    rep = check_ellipticity(K, check_samples)
    if not rep.passed:
        raise ClassViolationError(f"kernel fails its own ellipticity bounds (worst ratio {rep.worst_ratio:g})")
    desc = {"type": "mollified", "eps": eps, "kernel": K.descriptor} if K.descriptor else {}
    if K.terms is None:
        off, ww = _gl_rule(p.n, float(eps))
        fn0, n, s = K.fn, p.n, p.s

        def fn(x, y):
            y = np.asarray(y, float)
            r = np.abs(y) if n == 1 else np.linalg.norm(y, axis=-1)
            w = psi(r / eps)
            acc = 0.0
            for o, wq in zip(off, ww):
                acc = acc + wq * fn0(np.asarray(x, float) - o, y)
            with np.errstate(divide="ignore"):
                return w * r ** (-n - 2 * s) + (1.0 - w) * acc

        return Kernel(p, None, K.translation_invariant, K.x_modulus, fn, eps, desc)
    terms = [(None, BlendProfile(PowerProfile(1.0), eps, True, psi))]
    for m, prof in K.terms:
        outer = BlendProfile(prof, eps, False, psi)
        if m is None or K.translation_invariant:
            terms.append((m, outer))
        else:
            terms.append((convolve_callable(m, eps, p.n), outer))
    return Kernel(p, tuple(terms), K.translation_invariant, K.x_modulus, None, eps, desc)


# ----------------------------------------------------------------------------- functions

def mollifier_stencil(eps: float, h: float, n: int = 1) -> np.ndarray:
    """Node weights ``phi_eps(kh)`` renormalized to unit sum."""
    if eps < 2 * h * (1 - 1e-12):
        raise ResolutionError(f"epsilon={eps:g} is below 2h={2 * h:g}; refine the grid")
    k = int(np.floor(eps / h))
    ax = np.arange(-k, k + 1) * h
    if n == 1:
        w = make_mollifier(eps, 1)(ax)
    else:
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        w = make_mollifier(eps, 2)(np.stack([X, Y], axis=-1))
    return w / w.sum()


def _truncate(u: GridFunction, R: float | None):
    """Values and tail of ``u * chi_{|x| < R}``."""
    if R is None:
        return np.asarray(u.values), u.tail
    vals = np.where(u.spec.radii() < R, u.values, 0.0)
    if isinstance(u.tail, ZeroTail) or R <= u.spec.R_ext:
        return vals, ZeroTail()
    if isinstance(u.tail, ConstantTail):
        rad = R if u.tail.radius is None else min(R, u.tail.radius)
        return vals, ConstantTail(u.tail.value, rad)
    t = u.tail
    return vals, AnalyticTail(lambda x: np.where((np.abs(x) if np.ndim(x) <= 1 else
                                                  np.linalg.norm(x, axis=-1)) < R, t.values(x), 0.0),
                              0.0, t.sup(), support=R)


def mollify_function(u: GridFunction, eps: float, truncation_radius: float | None = None) -> GridFunction:
    """``(u chi_{B_R}) * phi_eps`` on the grid of ``u`` by direct discrete summation.

    Values outside the stored grid are taken from the (truncated) tail; the output tail is
    the mollified truncated tail, which is zero whenever the truncated input vanishes
    beyond ``R_ext - eps``.
    """
    spec = u.spec
    w = mollifier_stencil(eps, spec.h, spec.n)
    k = (w.shape[0] - 1) // 2
    vals, tail = _truncate(u, truncation_radius)
    if spec.n == 1:
        tmp = GridFunction(spec, vals, tail)
        padded = tmp.padded(k)
        out = np.convolve(padded, w[::-1], mode="valid")
    else:
        ax = (np.arange(-spec.m_ext - k, spec.m_ext + k + 1)) * spec.h
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        padded = tail.values(np.stack([X, Y], axis=-1))
        padded[k:-k or None, k:-k or None] = vals
        out = ndimage.correlate(padded, w, mode="constant")[k:-k or None, k:-k or None]
    return GridFunction(spec, out, _mollified_tail(spec, vals, tail, eps, truncation_radius))


def _mollified_tail(spec, vals, tail, eps, R):
    c = spec.coords()
    band = (np.abs(c) if spec.n == 1 else np.max(np.abs(c), axis=-1)) > spec.R_ext - eps - 1e-12
    if isinstance(tail, ZeroTail) and not np.any(vals[band] != 0.0):
        return ZeroTail()
    if isinstance(tail, ConstantTail) and tail.radius is None and np.all(vals[band] == tail.value):
        return tail
    if spec.n != 1:
        raise UnsupportedTailError("mollified non-trivial tails are implemented for n=1")
    ax = spec.axis

    def full(z):
        z = np.asarray(z, float)
        inside = np.abs(z) <= spec.R_ext
        out = np.where(inside, np.interp(z, ax, vals), 0.0)
        if np.any(~inside):
            far = np.where(inside, spec.R_ext + 1.0, z)
            # tails read trailing axes as coordinates, so pass 1D points flat
            out = np.where(inside, out, tail.values(far.ravel()).reshape(z.shape))
        return out

    mean = getattr(tail, "mean", 0.0) if R is None else 0.0
    if isinstance(tail, ConstantTail) and tail.radius is None:
        mean = tail.value
    src = tail_support(tail)
    src = spec.R_ext if src is not None and src < spec.R_ext else src
    return AnalyticTail(convolve_callable(full, eps, 1), mean, tail.sup(),
                        support=None if src is None else src + eps)
