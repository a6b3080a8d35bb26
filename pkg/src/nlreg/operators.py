"""Nonlocal operators on 1D grids: linear operators, fractional Laplacian, Pucci extremal
operators, finite inf-sup (Isaacs) operators and the fractional-Laplacian split.

All evaluations use one monotone discretization. With ``delta_j = u(x+jh) + u(x-jh) - 2u(x)``,

    L u(x) = -sum_j W_j(x) delta_j  -  far(x)

where ``W_j(x) >= 0`` come from :mod:`nlreg.quadrature` and ``far`` integrates the tail of
``u`` beyond ``R_far``.  Only ``n = 1`` is implemented here.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.special import gamma

from .errors import (ConfigurationError, PreconditionError, SchemeError, StencilError,
                     UnsupportedDimensionError, UnsupportedTailError)
from .grid import AnalyticTail, Box, ConstantTail, GridFunction, GridSpec, Modulus, ZeroTail
from .kernels import EllipticityParams, Kernel, PowerProfile, Profile, power_kernel
from .quadrature import (composite_gl, hat_weights, power_hat_weights, power_tail_mass,
                         tail_mass)

FAR_PIECE = 0.25      # GL piece length for oscillatory analytic tails
FAR_SPAN = 256.0      # analytic tails are integrated out to FAR_SPAN * R_far


# ----------------------------------------------------------------------------- constant

@lru_cache(maxsize=None)
def frac_laplacian_constant(n: int, s: float) -> float:
    """``c_{n,s}`` from ``c^{-1} |xi|^{2s} = int (1 - cos(xi . y)) |y|^{-n-2s} dy`` at ``|xi| = 1``.

    For ``n = 2`` the integral factors into the 1D one times
    ``int_R (1 + z^2)^{-(1+s)} dz`` (substitute ``y_2 = |y_1| z``).
    """
    if not 0 < s < 1:
        raise ConfigurationError("s must lie in (0, 1)")
    near, _ = integrate.quad(lambda t: 2 * math.sin(0.5 * t) ** 2 * t ** (-1 - 2 * s), 0.0, 1.0,
                             epsabs=1e-15, epsrel=1e-13, limit=200)
    osc, _ = integrate.quad(lambda t: t ** (-1 - 2 * s), 1.0, np.inf, weight="cos", wvar=1.0)
    one_d = 2.0 * (near + 1.0 / (2 * s) - osc)
    if n == 1:
        return 1.0 / one_d
    if n == 2:
        fac, _ = integrate.quad(lambda z: (1 + z * z) ** (-(1 + s)), -np.inf, np.inf,
                                epsabs=1e-15, epsrel=1e-13)
        return 1.0 / (one_d * fac)
    raise UnsupportedDimensionError(f"n={n}")


def frac_laplacian_constant_closed(n: int, s: float) -> float:
    """Standard closed form ``4^s Gamma(n/2+s) / (pi^{n/2} |Gamma(-s)|)`` (test reference)."""
    return 4 ** s * gamma(n / 2 + s) / (math.pi ** (n / 2) * abs(gamma(-s)))


# ----------------------------------------------------------------------------- specs

@dataclass(frozen=True)
class QuadConfig:
    """``r0`` (inner radius) defaults to ``h``; ``R_far`` defaults to ``R_ext + R_dom``."""

    r0: float | None = None
    R_far: float | None = None
    far_piece: float = FAR_PIECE


@dataclass(frozen=True, eq=False)
class LinearOperatorSpec:
    kernel: Kernel
    quad: QuadConfig = field(default_factory=QuadConfig)


def as_linear(L) -> LinearOperatorSpec:
    return L if isinstance(L, LinearOperatorSpec) else LinearOperatorSpec(L)


# ----------------------------------------------------------------------------- stencils

@dataclass(frozen=True, eq=False)
class Stencil:
    """Node set where an operator is evaluated plus the truncation index ``J``."""

    spec: GridSpec
    nodes: np.ndarray     # node indices into the grid
    J: int
    pad: int

    @property
    def x(self) -> np.ndarray:
        return self.spec.axis[self.nodes]

    @property
    def R_far(self) -> float:
        return self.J * self.spec.h


def make_stencil(spec: GridSpec, nodes=None, quad: QuadConfig | None = None,
                 window: float | None = None) -> Stencil:
    """Stencil for the given node indices (default: every node with ``|x| <= R_dom``).

    ``window`` enlarges the admissible evaluation radius beyond ``R_dom`` (used by
    pairings that need the operator on the whole grid).
    """
    if spec.n != 1:
        raise UnsupportedDimensionError("operators are implemented for n=1")
    quad = quad or QuadConfig()
    h = spec.h
    R_win = spec.R_dom if window is None else window
    if nodes is None:
        nodes = np.flatnonzero(np.abs(spec.axis) <= R_win + 1e-12)
    nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
    if nodes.size == 0:
        raise StencilError("no evaluation nodes")
    xmax = float(np.max(np.abs(spec.axis[nodes])))
    if xmax > R_win + 1e-12:
        raise StencilError(f"node at |x|={xmax:g} lies outside the evaluation window {R_win:g}")
    if quad.r0 is not None and quad.r0 > h * (1 + 1e-12):
        raise ConfigurationError("inner radius r0 must not exceed h")
    R_far = spec.R_ext + R_win if quad.R_far is None else quad.R_far
    if R_far < spec.R_ext + xmax - 1e-12:
        raise ConfigurationError("R_far must reach the exterior of the grid from every node")
    J = int(math.ceil(R_far / h - 1e-9))
    off = np.abs(nodes - spec.m_ext).max()
    pad = max(0, J + off - spec.m_ext)
    return Stencil(spec, nodes, J, pad)


def node_index(spec: GridSpec, x) -> int:
    try:
        return spec.index_of(x)
    except ConfigurationError as exc:
        raise StencilError(str(exc)) from None


# ----------------------------------------------------------------------------- weights

@lru_cache(maxsize=512)
def _profile_weights(profile: Profile, s: float, h: float, J: int):
    """``(W, T)``: node weights and tail mass beyond ``Jh`` of ``profile(|y|) |y|^{-1-2s}``."""
    if isinstance(profile, PowerProfile):
        W = profile.c * power_hat_weights(s, h, J)
        T = profile.c * power_tail_mass(s, J * h)
    else:
        W = hat_weights(profile.ratio, s, h, J)
        T = tail_mass(profile.ratio, s, J * h, profile.settle, profile.ratio_inf)
    W.setflags(write=False)
    return W, T


_WEIGHT_CACHE: "weakref.WeakKeyDictionary[Kernel, dict]" = weakref.WeakKeyDictionary()


def kernel_weights(K: Kernel, st: Stencil):
    """Per-node weight matrix ``(len(nodes), J)`` and tail-mass vector."""
    if K.params.n != 1:
        raise UnsupportedDimensionError("operators are implemented for n=1")
    key = (st.spec, st.J, st.nodes.tobytes())
    per = _WEIGHT_CACHE.setdefault(K, {})
    if key in per:
        return per[key]
    s, h, J = K.params.s, st.spec.h, st.J
    x = st.x
    if K.terms is not None:
        W = np.zeros((x.size, J))
        T = np.zeros(x.size)
        for m, prof in K.terms:
            w, t = _profile_weights(prof, s, h, J)
            fac = np.ones(x.size) if m is None else np.broadcast_to(np.asarray(m(x), float), x.shape)
            W += fac[:, None] * w[None, :]
            T += fac * t
    else:
        W = np.empty((x.size, J))
        T = np.empty(x.size)
        for i, xi in enumerate(x):
            ratio = lambda r, xi=xi: np.asarray(K.eval(xi, r), float) * np.abs(r) ** (1 + 2 * s)
            W[i] = hat_weights(ratio, s, h, J)
            T[i] = float(integrate.quad(lambda r: float(K.eval(xi, r)), J * h, np.inf, limit=400)[0])
    if np.any(W < 0) or np.any(T < 0) or not np.all(np.isfinite(W)):
        raise SchemeError("negative quadrature weight: the discretization is not monotone")
    W.setflags(write=False)
    T.setflags(write=False)
    per[key] = (W, T)
    return W, T


def _far_nodes(K: Kernel, st: Stencil, quad: QuadConfig):
    """GL nodes/weights on ``[R_far, FAR_SPAN R_far]`` and the remaining mass, per node."""
    R0 = st.R_far
    R1 = FAR_SPAN * R0
    pieces = int(math.ceil((R1 - R0) / quad.far_piece))
    y, w = composite_gl(R0, R1, pieces, 4)
    s = K.params.s
    if K.terms is not None:
        Ky = np.asarray(K.ratio(st.x[:, None], y[None, :]), float) * y[None, :] ** (-1 - 2 * s)
        rest = np.zeros(st.x.size)
        for m, prof in K.terms:
            t = tail_mass(prof.ratio, s, R1, prof.settle, prof.ratio_inf)
            rest += (np.ones(st.x.size) if m is None else np.asarray(m(st.x), float)) * t
    else:
        Ky = np.stack([np.asarray(K.eval(xi, y), float) for xi in st.x])
        rest = np.array([integrate.quad(lambda r: float(K.eval(xi, r)), R1, np.inf)[0] for xi in st.x])
    return y, Ky * w[None, :], rest


def second_differences(u: GridFunction, st: Stencil) -> np.ndarray:
    """``delta_j u(x_i)`` for every stencil node (rows) and ``j = 1..J`` (columns)."""
    if u.tail is None:
        raise UnsupportedTailError("grid function has no exterior tail descriptor")
    up = u.padded(st.pad)
    c = st.nodes + st.pad
    j = np.arange(1, st.J + 1)
    return up[c[:, None] + j[None, :]] + up[c[:, None] - j[None, :]] - 2.0 * up[c][:, None]


def far_differences(K: Kernel, u: GridFunction, st: Stencil, quad: QuadConfig):
    """Far-field second differences and their weights, ``(D, w)`` with matching shapes."""
    ux = np.asarray(u.values)[st.nodes]
    tail = u.tail
    _, T = kernel_weights(K, st)
    if isinstance(tail, ZeroTail):
        return (-2.0 * ux)[:, None], T[:, None]
    if isinstance(tail, ConstantTail) and tail.radius is None:
        return (2.0 * tail.value - 2.0 * ux)[:, None], T[:, None]
    if not isinstance(tail, (AnalyticTail, ConstantTail)):
        raise UnsupportedTailError(f"unsupported tail {type(tail).__name__}")
    y, wq, rest = _far_nodes(K, st, quad)
    x = st.x[:, None]
    # tails read trailing axes as coordinates, so pass 1D points flat
    zp, zm = (x + y[None, :]), (x - y[None, :])
    vals = tail.values(zp.ravel()).reshape(zp.shape) + tail.values(zm.ravel()).reshape(zm.shape)
    mean = tail.value if isinstance(tail, ConstantTail) and tail.radius is None else getattr(tail, "mean", 0.0)
    D = np.concatenate([vals - 2.0 * ux[:, None], (2.0 * mean - 2.0 * ux)[:, None]], axis=1)
    w = np.concatenate([np.broadcast_to(wq, vals.shape), rest[:, None]], axis=1)
    return D, w


# ----------------------------------------------------------------------------- linear

def apply_linear(L, u: GridFunction, st: Stencil | None = None) -> np.ndarray:
    """``L u`` at every stencil node."""
    L = as_linear(L)
    st = st or make_stencil(u.spec, quad=L.quad)
    W, _ = kernel_weights(L.kernel, st)
    D = second_differences(u, st)
    Df, wf = far_differences(L.kernel, u, st, L.quad)
    return -(np.einsum("ij,ij->i", W, D) + np.einsum("ij,ij->i", wf, Df))


def eval_linear(L, u: GridFunction, x) -> float:
    """Symmetric-form integral ``1/2 int (2u(x) - u(x+y) - u(x-y)) K(x, y) dy`` at node ``x``."""
    L = as_linear(L)
    st = make_stencil(u.spec, [node_index(u.spec, x)], L.quad)
    return float(apply_linear(L, u, st)[0])


def frac_laplacian_grid(u: GridFunction, s: float, st: Stencil | None = None) -> np.ndarray:
    return frac_laplacian_constant(1, s) * apply_linear(power_kernel(1, s), u, st)


def frac_laplacian(u: GridFunction, x, s: float) -> float:
    """Fourier-normalized ``(-Delta)^s u`` at node ``x``."""
    return frac_laplacian_constant(1, s) * eval_linear(_unit_power(s), u, x)


@lru_cache(maxsize=None)
def _unit_power(s: float) -> Kernel:
    return power_kernel(1, s)


# ----------------------------------------------------------------------------- Pucci

def _pucci(u: GridFunction, st: Stencil, params: EllipticityParams, plus: bool) -> np.ndarray:
    K = _unit_power(params.s)
    W, _ = kernel_weights(K, st)
    D = second_differences(u, st)
    Df, wf = far_differences(K, u, st, QuadConfig())
    hi, lo = (params.Lam, params.lam) if plus else (params.lam, params.Lam)

    def part(w, d):
        return np.einsum("ij,ij->i", w, hi * np.maximum(d, 0.0) - lo * np.maximum(-d, 0.0))

    return part(W, D) + part(wf, Df)


def extremal_plus_grid(u, params, st=None):
    return _pucci(u, st or make_stencil(u.spec), params, True)


def extremal_minus_grid(u, params, st=None):
    return _pucci(u, st or make_stencil(u.spec), params, False)


def extremal_plus(u: GridFunction, x, params: EllipticityParams) -> float:
    """``M+ u(x) = 1/2 int (Lambda (delta u)_+ - lambda (delta u)_-) |y|^{-n-2s} dy``."""
    return float(_pucci(u, make_stencil(u.spec, [node_index(u.spec, x)]), params, True)[0])


def extremal_minus(u: GridFunction, x, params: EllipticityParams) -> float:
    return float(_pucci(u, make_stencil(u.spec, [node_index(u.spec, x)]), params, False)[0])


# ----------------------------------------------------------------------------- Isaacs

def zeroth_values(c, spec: GridSpec, nodes: np.ndarray) -> np.ndarray:
    """A zeroth-order term (number, callable of x, or GridFunction) at the given nodes."""
    if isinstance(c, GridFunction):
        if c.spec != spec:
            raise ConfigurationError("zeroth-order term lives on a different grid")
        return np.asarray(c.values)[nodes]
    if callable(c):
        return np.broadcast_to(np.asarray(c(spec.axis[nodes]), float), nodes.shape).copy()
    return np.full(nodes.shape, float(c))


@dataclass(frozen=True, eq=False)
class IsaacsSpec:
    """``I(u, x) = min_b max_a (-L_ab u(x) + c_ab(x))``; ``kernels[b][a]``, ``zeroth[b][a]``."""

    kernels: tuple
    zeroth: tuple
    modulus: Modulus | None = None
    params: EllipticityParams | None = None

    def __post_init__(self):
        ks = tuple(tuple(row) for row in self.kernels)
        cs = tuple(tuple(row) for row in self.zeroth)
        if not ks or not ks[0]:
            raise ConfigurationError("empty family")
        if len({len(r) for r in ks}) != 1 or [len(r) for r in ks] != [len(r) for r in cs]:
            raise ConfigurationError("kernels and zeroth terms must form matching rectangles")
        p = ks[0][0].params
        for row in ks:
            for K in row:
                if K.params != p:
                    raise ConfigurationError("all kernels must share one set of ellipticity parameters")
        object.__setattr__(self, "kernels", ks)
        object.__setattr__(self, "zeroth", cs)
        object.__setattr__(self, "params", p)

    @property
    def shape(self) -> tuple:
        return len(self.kernels), len(self.kernels[0])

    @property
    def translation_invariant(self) -> bool:
        return all(K.translation_invariant for row in self.kernels for K in row)

    @classmethod
    def single(cls, K: Kernel, c=0.0, modulus: Modulus | None = None) -> "IsaacsSpec":
        return cls(((K,),), ((c,),), modulus)

    def check_modulus(self, spec: GridSpec, region: Box | None = None) -> bool:
        """Sampled check that every ``c_ab`` has discrete modulus below ``modulus``."""
        if self.modulus is None:
            return True
        nodes = np.flatnonzero((region or Box.ball(spec.R_dom)).mask(spec))
        from .grid import sampled_modulus
        for row in self.zeroth:
            for c in row:
                v = zeroth_values(c, spec, nodes)
                lags = np.arange(1, min(64, v.size))
                osc = np.array([np.max(np.abs(v[k:] - v[:-k])) for k in lags])
                if np.any(osc > self.modulus(lags * spec.h) + 1e-12):
                    return False
        return True


class IsaacsValue(NamedTuple):
    value: float
    a: int
    b: int


def isaacs_entries(I: IsaacsSpec, u: GridFunction, st: Stencil) -> np.ndarray:
    """Array ``E[b, a, node] = -L_ab u + c_ab``."""
    nb, na = I.shape
    E = np.empty((nb, na, st.nodes.size))
    for b in range(nb):
        for a in range(na):
            E[b, a] = -apply_linear(I.kernels[b][a], u, st) + zeroth_values(I.zeroth[b][a], u.spec, st.nodes)
    return E


def infsup(E: np.ndarray):
    """``min_b max_a E[b, a, ...]`` with lowest-index tie breaking, plus attaining ``(a, b)``."""
    amax = np.argmax(E, axis=1)                         # (nb, nodes)
    rowmax = np.take_along_axis(E, amax[:, None], axis=1)[:, 0]
    bmin = np.argmin(rowmax, axis=0)
    val = np.take_along_axis(rowmax, bmin[None], axis=0)[0]
    a = np.take_along_axis(amax, bmin[None], axis=0)[0]
    return val, a, bmin


def isaacs_grid(I: IsaacsSpec, u: GridFunction, st: Stencil | None = None):
    """Values and attaining indices at every stencil node."""
    st = st or make_stencil(u.spec)
    return infsup(isaacs_entries(I, u, st))


def isaacs_eval(I: IsaacsSpec, u: GridFunction, x) -> IsaacsValue:
    st = make_stencil(u.spec, [node_index(u.spec, x)])
    v, a, b = isaacs_grid(I, u, st)
    return IsaacsValue(float(v[0]), int(a[0]), int(b[0]))


# ----------------------------------------------------------------------------- split

def remainder_weights(K: Kernel, st: Stencil):
    """Weights of ``K - |y|^{-1-2s}``; they must vanish where the kernel was implanted."""
    W, T = kernel_weights(K, st)
    Wp, Tp = kernel_weights(_unit_power(K.params.s), st)
    if K.is_unit_power:
        return np.zeros_like(W), np.zeros_like(T)
    if K.implanted_eps is None:
        raise PreconditionError("kernel was not produced by mollify_kernel")
    Wr, Tr = W - Wp, T - Tp
    h = st.spec.h
    j_in = int(math.floor(0.5 * K.implanted_eps / h)) - 1   # hats supported inside B_{eps/2}
    if j_in >= 1:
        scale = np.abs(Wp[:, :j_in]).max()
        if np.abs(Wr[:, :j_in]).max() > 1e-9 * scale:
            raise PreconditionError("kernel differs from |y|^(-1-2s) inside B_(eps/2)")
    return Wr, Tr


def split_zeroth_grid(I_hat: IsaacsSpec, v: GridFunction, st: Stencil | None = None) -> np.ndarray:
    """``f_eps = inf sup (-Ltilde_ab v + c_ab)`` with the bounded remainder kernels."""
    st = st or make_stencil(v.spec)
    nb, na = I_hat.shape
    D = second_differences(v, st)
    E = np.empty((nb, na, st.nodes.size))
    for b in range(nb):
        for a in range(na):
            K = I_hat.kernels[b][a]
            Wr, Tr = remainder_weights(K, st)
            if isinstance(v.tail, (ZeroTail,)) or (isinstance(v.tail, ConstantTail) and v.tail.radius is None):
                Df, _ = far_differences(K, v, st, QuadConfig())
                far = Tr * Df[:, 0]
            else:
                Df, wf = far_differences(K, v, st, QuadConfig())
                Dp, wp = far_differences(_unit_power(K.params.s), v, st, QuadConfig())
                far = np.einsum("ij,ij->i", wf, Df) - np.einsum("ij,ij->i", wp, Dp)
            E[b, a] = np.einsum("ij,ij->i", Wr, D) + far + zeroth_values(I_hat.zeroth[b][a], v.spec, st.nodes)
    return infsup(E)[0]


def split_zeroth(I_hat: IsaacsSpec, v: GridFunction, x) -> float:
    st = make_stencil(v.spec, [node_index(v.spec, x)])
    return float(split_zeroth_grid(I_hat, v, st)[0])
