"""Kernels of the form ``K(x, y) = sum_k m_k(x) ratio_k(|y|) |y|^{-n-2s}``, ellipticity
certification and sampled regularity seminorms."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (ConfigurationError, InvalidKernelError, QuadratureError,
                     UnsupportedDimensionError)
from .grid import Modulus
from .quadrature import adaptive_gl, gauss_legendre


@dataclass(frozen=True)
class EllipticityParams:
    n: int
    s: float
    lam: float
    Lam: float

    def __post_init__(self):
        if self.n not in (1, 2):
            raise UnsupportedDimensionError(f"dimension n={self.n!r} not supported")
        if not 0.0 < self.s < 1.0:
            raise ConfigurationError("s must lie in (0, 1)")
        if not 0.0 < self.lam <= self.Lam:
            raise ConfigurationError("need 0 < lambda <= Lambda")

    def to_dict(self):
        return {"n": self.n, "s": self.s, "lambda": self.lam, "Lambda": self.Lam}


# ----------------------------------------------------------------------------- profiles

class Profile:
    """Radial factor ``ratio(r)``; the kernel term is ``ratio(|y|) |y|^{-n-2s}``."""

    #: radius beyond which ratio == ratio_inf
    settle: float = 0.0
    ratio_inf: float = 1.0
    constant: float | None = None

    def ratio(self, r):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PowerProfile(Profile):
    c: float = 1.0

    @property
    def constant(self):
        return self.c

    @property
    def ratio_inf(self):
        return self.c

    def ratio(self, r):
        return np.full(np.shape(r), self.c)

    def to_dict(self):
        return {"type": "power", "c": self.c}


@dataclass(frozen=True)
class TableProfile(Profile):
    """Ratio interpolated linearly in ``log r`` between tabulated radii, constant outside."""

    radii: tuple
    ratios: tuple

    def __post_init__(self):
        r, q = np.asarray(self.radii, float), np.asarray(self.ratios, float)
        if r.ndim != 1 or r.size != q.size or r.size < 1:
            raise InvalidKernelError("table needs matching radii/ratios lists")
        if np.any(r <= 0) or np.any(np.diff(r) <= 0):
            raise InvalidKernelError("table radii must be positive and increasing")
        if np.any(q <= 0) or not np.all(np.isfinite(q)):
            raise InvalidKernelError("table ratios must be positive and finite")

    @property
    def settle(self):
        return float(self.radii[-1])

    @property
    def ratio_inf(self):
        return float(self.ratios[-1])

    def ratio(self, r):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore"):
            lr = np.log(np.maximum(r, 1e-300))
        return np.interp(lr, np.log(np.asarray(self.radii)), np.asarray(self.ratios))

    def to_dict(self):
        return {"type": "table", "radii": list(self.radii), "ratios": list(self.ratios)}


def bump_profile_fn(t):
    """Unnormalized standard bump ``exp(-1/(1-t^2))`` on ``|t| < 1``."""
    t = np.asarray(t, float)
    out = np.zeros(t.shape)
    m = np.abs(t) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - t[m] ** 2))
    return out


@dataclass(frozen=True)
class BumpProfile(Profile):
    """``c + amplitude * bump((r - center) / width)``."""

    c: float = 1.0
    amplitude: float = 1.0
    center: float = 1.0
    width: float = 0.25

    @property
    def settle(self):
        return self.center + self.width

    @property
    def ratio_inf(self):
        return self.c

    def ratio(self, r):
        return self.c + self.amplitude * math.e * bump_profile_fn((np.asarray(r, float) - self.center) / self.width)

    def to_dict(self):
        return {"type": "bump", "c": self.c, "amplitude": self.amplitude,
                "center": self.center, "width": self.width}


@dataclass(frozen=True, eq=False)
class BlendProfile(Profile):
    """``w(r/eps) * base.ratio(r)`` with ``w = psi`` (inner) or ``1 - psi`` (outer)."""

    base: Profile
    eps: float
    inner: bool
    cutoff: Callable

    @property
    def settle(self):
        return max(self.eps, self.base.settle)

    @property
    def ratio_inf(self):
        return 0.0 if self.inner else self.base.ratio_inf

    def ratio(self, r):
        w = self.cutoff(np.asarray(r, float) / self.eps)
        return (w if self.inner else 1.0 - w) * self.base.ratio(r)

    def to_dict(self):
        return {"type": "blend", "side": "inner" if self.inner else "outer",
                "eps": self.eps, "base": self.base.to_dict()}


# ----------------------------------------------------------------------------- kernel

@dataclass(frozen=True, eq=False)
class Kernel:
    """Symmetric kernel ``K(x, y)``.

    ``terms`` is a tuple of ``(m, profile)`` with ``m`` a callable of ``x`` (or ``None``
    for the constant 1).  A kernel built from a bare evaluator has ``terms = None`` and is
    handled by slower per-point quadrature in the operators.
    """

    params: EllipticityParams
    terms: tuple | None
    translation_invariant: bool = True
    x_modulus: Modulus | None = None
    fn: Callable | None = None
    implanted_eps: float | None = None
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.terms is None and self.fn is None:
            raise InvalidKernelError("kernel needs terms or an evaluator")

    @property
    def is_unit_power(self) -> bool:
        return (self.terms is not None and len(self.terms) == 1 and self.terms[0][0] is None
                and isinstance(self.terms[0][1], PowerProfile) and self.terms[0][1].c == 1.0)

    def ratio(self, x, r):
        """``K(x, y) |y|^{n+2s}`` at radius ``r = |y|``; broadcasts ``x`` against ``r``."""
        if self.terms is None:
            raise InvalidKernelError("evaluator kernels expose eval only")
        out = 0.0
        for m, prof in self.terms:
            q = prof.ratio(r)
            out = out + (q if m is None else m(x) * q)
        return out * np.ones(np.broadcast_shapes(np.shape(out), np.shape(r)))

    def eval(self, x, y):
        """Kernel value; ``y`` is a scalar/array of offsets for n=1 or ``(..., 2)`` for n=2."""
        y = np.asarray(y, float)
        n = self.params.n
        r = np.abs(y) if n == 1 else np.linalg.norm(y, axis=-1)
        if self.fn is not None:
            return np.asarray(self.fn(x, y), float)
        with np.errstate(divide="ignore"):
            return self.ratio(x, r) * r ** (-n - 2.0 * self.params.s)

    __call__ = eval

    def to_dict(self) -> dict:
        if not self.descriptor:
            raise ConfigurationError("kernel has no serializable descriptor")
        return dict(self.descriptor)


def power_kernel(n: int = 1, s: float = 0.5, c: float = 1.0, lam: float | None = None,
                 Lam: float | None = None) -> Kernel:
    """``c |y|^{-n-2s}``; the class bounds default to ``lam = Lam = c``."""
    params = EllipticityParams(n, s, c if lam is None else lam, c if Lam is None else Lam)
    return Kernel(params, ((None, PowerProfile(c)),), True, Modulus.zero(),
                  descriptor={"type": "power", "n": n, "s": s, "c": c,
                              "lambda": params.lam, "Lambda": params.Lam})


def modulated_power_kernel(n: int = 1, s: float = 0.25, base: float = 2.0,
                           amplitude: float = 1.0, freq: float = 1.0,
                           lam: float | None = None, Lam: float | None = None) -> Kernel:
    """``(base + amplitude sin(freq x_1)) |y|^{-n-2s}``; Lipschitz in x with slope
    ``|amplitude * freq|``."""
    lam = base - abs(amplitude) if lam is None else lam
    Lam = base + abs(amplitude) if Lam is None else Lam
    params = EllipticityParams(n, s, lam, Lam)

    def m(x):
        x = np.asarray(x, float)
        x1 = x if n == 1 else x[..., 0]
        return base + amplitude * np.sin(freq * x1)

    return Kernel(params, ((m, PowerProfile(1.0)),), amplitude == 0.0,
                  Modulus.linear(abs(amplitude * freq)),
                  descriptor={"type": "modulated-power", "n": n, "s": s, "base": base,
                              "amplitude": amplitude, "freq": freq,
                              "lambda": lam, "Lambda": Lam})


def table_kernel(n, s, radii, ratios, lam=None, Lam=None) -> Kernel:
    prof = TableProfile(tuple(float(r) for r in radii), tuple(float(q) for q in ratios))
    q = np.asarray(prof.ratios)
    params = EllipticityParams(n, s, float(q.min()) if lam is None else lam,
                               float(q.max()) if Lam is None else Lam)
    return Kernel(params, ((None, prof),), True, Modulus.zero(),
                  descriptor={"type": "table", "n": n, "s": s, "radii": list(prof.radii),
                              "ratios": list(prof.ratios), "lambda": params.lam,
                              "Lambda": params.Lam})


def bump_kernel(n=1, s=0.5, c=1.0, amplitude=1.0, center=1.0, width=0.25,
                lam=None, Lam=None) -> Kernel:
    """Power kernel plus a smooth radial bump in the ratio around ``|y| = center``."""
    prof = BumpProfile(c, amplitude, center, width)
    lo, hi = min(c, c + amplitude), max(c, c + amplitude)
    params = EllipticityParams(n, s, lo if lam is None else lam, hi if Lam is None else Lam)
    return Kernel(params, ((None, prof),), True, Modulus.zero(),
                  descriptor={"type": "bump", "n": n, "s": s, "c": c, "amplitude": amplitude,
                              "center": center, "width": width, "lambda": params.lam,
                              "Lambda": params.Lam})


def scaled_kernel(K: Kernel, c: float) -> Kernel:
    """``c K`` with the class bounds scaled alongside."""
    if K.terms is None:
        fn = K.fn
        return Kernel(EllipticityParams(K.params.n, K.params.s, c * K.params.lam, c * K.params.Lam),
                      None, K.translation_invariant, K.x_modulus, lambda x, y: c * fn(x, y))
    terms = tuple((None, _scale_profile(p, c)) if m is None else ((lambda x, m=m: c * m(x)), p)
                  for m, p in K.terms)
    d = dict(K.descriptor)
    if d:
        d = {"type": "scaled", "factor": c, "kernel": d}
    return Kernel(EllipticityParams(K.params.n, K.params.s, c * K.params.lam, c * K.params.Lam),
                  terms, K.translation_invariant, K.x_modulus, None, K.implanted_eps, d)


def _scale_profile(p: Profile, c: float) -> Profile:
    if isinstance(p, PowerProfile):
        return PowerProfile(p.c * c)
    if isinstance(p, TableProfile):
        return TableProfile(p.radii, tuple(c * q for q in p.ratios))
    if isinstance(p, BumpProfile):
        return BumpProfile(c * p.c, c * p.amplitude, p.center, p.width)
    raise ConfigurationError(f"cannot scale profile {type(p).__name__}")


def with_params(K: Kernel, lam: float, Lam: float) -> Kernel:
    """Same evaluator, different declared class bounds."""
    d = dict(K.descriptor)
    if d:
        d.update({"lambda": lam, "Lambda": Lam})
    return Kernel(EllipticityParams(K.params.n, K.params.s, lam, Lam), K.terms,
                  K.translation_invariant, K.x_modulus, K.fn, K.implanted_eps, d)


def convex_combination(K1: Kernel, K2: Kernel, t: float) -> Kernel:
    if K1.params != K2.params:
        raise ConfigurationError("kernels must share ellipticity parameters")
    f1, f2 = K1.eval, K2.eval
    return Kernel(K1.params, None, K1.translation_invariant and K2.translation_invariant,
                  None, lambda x, y: t * f1(x, y) + (1.0 - t) * f2(x, y))


def kernel_from_dict(d: dict) -> Kernel:
    try:
        kind = d["type"]
        n, s = int(d.get("n", 1)), float(d["s"])
        lam, Lam = d.get("lambda"), d.get("Lambda")
        if kind == "power":
            return power_kernel(n, s, float(d.get("c", 1.0)), lam, Lam)
        if kind == "modulated-power":
            return modulated_power_kernel(n, s, float(d.get("base", 2.0)),
                                          float(d.get("amplitude", 1.0)),
                                          float(d.get("freq", 1.0)), lam, Lam)
        if kind == "table":
            return table_kernel(n, s, d["radii"], d["ratios"], lam, Lam)
        if kind == "bump":
            return bump_kernel(n, s, float(d.get("c", 1.0)), float(d.get("amplitude", 1.0)),
                               float(d.get("center", 1.0)), float(d.get("width", 0.25)), lam, Lam)
    except KeyError as exc:
        raise ConfigurationError(f"kernel description is missing field {exc}") from None
    raise ConfigurationError(f"unknown kernel type {d.get('type')!r}")


def load_kernel(path) -> Kernel:
    return kernel_from_dict(json.loads(Path(path).read_text()))


# ----------------------------------------------------------------------------- certification

@dataclass(frozen=True)
class EllipticityReport:
    passed: bool
    symmetric: bool
    min_ratio: float
    max_ratio: float
    worst_ratio: float
    worst_point: tuple
    failures_small_y: int
    failures_large_y: int
    samples: int

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _sample_points(K: Kernel, samples: int, rng):
    n = K.params.n
    if K.translation_invariant:
        xs = np.zeros((samples, n))
    else:
        xs = rng.uniform(-2.0, 2.0, size=(samples, n))
    # |y| spread over six dyadic scales 2^-3 .. 2^3
    k = np.arange(samples) % 6 - 3
    r = 2.0 ** k * rng.uniform(1.0, 2.0, size=samples)
    if n == 1:
        y = r * rng.choice([-1.0, 1.0], size=samples)
        return xs[:, 0], y, r
    th = rng.uniform(0, 2 * np.pi, size=samples)
    y = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
    return xs, y, r


def check_ellipticity(K: Kernel, samples: int = 1000, seed: int = 0) -> EllipticityReport:
    """Sample ``K(x, y) |y|^{n+2s}`` and compare with ``[lambda, Lambda]``."""
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    xs, y, r = _sample_points(K, samples, rng)
    kv = np.asarray(K.eval(xs, y), float)
    kneg = np.asarray(K.eval(xs, -y), float)
    if not np.all(np.isfinite(kv)) or np.any(kv <= 0):
        raise InvalidKernelError("kernel returned nonpositive or non-finite values")
    n, s = K.params.n, K.params.s
    q = kv * r ** (n + 2 * s)
    sym = bool(np.allclose(kv, kneg, rtol=1e-12, atol=0.0))
    tol = 1e-12
    lo_bad = q < K.params.lam * (1 - tol)
    hi_bad = q > K.params.Lam * (1 + tol)
    bad = lo_bad | hi_bad
    # worst = sample farthest outside the band (in log scale), else the most extreme ratio
    dev = np.maximum(np.log(K.params.lam / q), np.log(q / K.params.Lam))
    i = int(np.argmax(dev))
    pt = (np.atleast_1d(xs[i]).tolist(), np.atleast_1d(y[i]).tolist())
    return EllipticityReport(
        passed=bool(not bad.any() and sym), symmetric=sym,
        min_ratio=float(q.min()), max_ratio=float(q.max()), worst_ratio=float(q[i]),
        worst_point=(tuple(pt[0]), tuple(pt[1])),
        failures_small_y=int(np.sum(bad & (r < 1))), failures_large_y=int(np.sum(bad & (r >= 1))),
        samples=samples)


# ----------------------------------------------------------------------------- seminorms

@dataclass(frozen=True)
class SeminormReport:
    kind: str
    estimate: float
    scales_tested: list
    pairs_tested: int
    per_scale: list = field(default_factory=list)

    def to_dict(self):
        return {"kind": self.kind, "estimate": self.estimate, "scales_tested": list(self.scales_tested),
                "pairs_tested": self.pairs_tested, "per_scale": list(self.per_scale)}


def _annulus_integral(fn, r: float, n: int, rtol: float = 1e-6) -> float:
    """``int_{r <= |y| <= 2r} fn(y) dy`` with adaptive GL (polar tensor rule for n=2)."""
    if n == 1:
        return adaptive_gl(lambda t: fn(t) + fn(-t), r, 2 * r, rtol)
    prev = None
    for m in (16, 32, 64, 128, 256):
        t, w = gauss_legendre(m)
        rho = 1.5 * r + 0.5 * r * t
        th = np.pi * (t + 1.0)
        R, TH = np.meshgrid(rho, th, indexing="ij")
        W = np.outer(0.5 * r * w, np.pi * w)
        y = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1)
        val = float(np.sum(fn(y) * R * W))
        if prev is not None and abs(val - prev) <= rtol * abs(val) + 1e-14:
            return val
        prev = val
    raise QuadratureError("2D annulus quadrature did not settle")


def estimate_x_continuity(K: Kernel, r: float, x, xp, rtol: float = 1e-6) -> float:
    """``r^{2s} int_{B_2r \\ B_r} |K(x,y) - K(x',y)| dy``."""
    if not r > 0:
        raise ConfigurationError("r must be positive")
    if np.allclose(np.asarray(x, float), np.asarray(xp, float)):
        raise ConfigurationError("need x != x'")
    if K.translation_invariant:
        return 0.0
    n = K.params.n
    val = _annulus_integral(lambda y: np.abs(K.eval(x, y) - K.eval(xp, y)), r, n, rtol)
    return val * r ** (2 * K.params.s)


def _central_diff(f, y, m: int, step: float):
    """``m``-th derivative of ``f`` along the (1D) variable by nested central differences."""
    if m == 0:
        return f(y)
    return (_central_diff(f, y + step, m - 1, step) - _central_diff(f, y - step, m - 1, step)) / (2 * step)


def estimate_y_seminorm(K: Kernel, mu: float, scales, x=0.0, pairs: int = 12,
                        seed: int = 0, rtol: float = 1e-6) -> SeminormReport:
    """Scale-normalized y-regularity seminorm, sampled.

    For each scale ``r`` and pair ``z, z'`` in ``B_{r/2}`` this computes
    ``int_{B_2r \\ B_r} |D^m K(x, z-y) - D^m K(x, z'-y)| dy / (|z-z'|^{mu-m} r^{-2s-mu})``
    with ``m = floor(mu)`` and returns the maximum.
    """
    if not mu > 0 or float(mu).is_integer():
        raise ConfigurationError("mu must be positive and non-integer")
    m = int(math.floor(mu))
    n, s = K.params.n, K.params.s
    if n != 1 and m > 0:
        raise UnsupportedDimensionError("y-derivatives are implemented for n=1")
    rng = np.random.default_rng(seed)
    best, per = 0.0, []
    for r in scales:
        step = 1e-4 * r
        zs = _pair_samples(r, n, pairs, rng)
        scale_best = 0.0
        for z, zp in zs:
            dz = float(np.linalg.norm(np.atleast_1d(z - zp)))
            if dz == 0.0:
                continue
            if n == 1:
                fz = lambda y, z=z: _central_diff(lambda t: K.eval(x, t), z - y, m, step)
                fzp = lambda y, zp=zp: _central_diff(lambda t: K.eval(x, t), zp - y, m, step)
            else:
                fz = lambda y, z=z: K.eval(x, z - y)
                fzp = lambda y, zp=zp: K.eval(x, zp - y)

            def integrand(y, fz=fz, fzp=fzp):
                d = np.abs(fz(y) - fzp(y))
                if not np.all(np.isfinite(d)):
                    raise InvalidKernelError("non-finite finite-difference derivative")
                return d

            val = _annulus_integral(integrand, r, n, rtol)
            scale_best = max(scale_best, val / (dz ** (mu - m) * r ** (-2 * s - mu)))
        per.append(scale_best)
        best = max(best, scale_best)
    return SeminormReport("y-order-mu", best, [float(r) for r in scales],
                          len(list(scales)) * pairs, per)


def _pair_samples(r, n, pairs, rng):
    """Pairs in ``B_{r/2}``: a few deterministic ones plus seeded random ones."""
    out = []
    if n == 1:
        for a, b in ((0.0, 0.5), (-0.5, 0.5), (0.0, 0.05), (0.25, 0.3)):
            out.append((a * r, b * r))
        while len(out) < pairs:
            a, b = rng.uniform(-0.5, 0.5, size=2) * r
            out.append((a, b))
        return out[:pairs]
    for a, b in (((0.0, 0.0), (0.5, 0.0)), ((0.0, 0.0), (0.0, 0.05))):
        out.append((np.array(a) * r, np.array(b) * r))
    while len(out) < pairs:
        p = rng.uniform(-0.5, 0.5, size=(2, 2)) * r
        if np.all(np.linalg.norm(p, axis=1) <= 0.5 * r):
            out.append((p[0], p[1]))
    return out[:pairs]
