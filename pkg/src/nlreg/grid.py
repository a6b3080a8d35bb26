"""Uniform grids on symmetric boxes, grid functions with exterior tails, discrete norms.

A grid covers ``[-R_ext, R_ext]^n`` with spacing ``h``; the inner box ``[-R_dom, R_dom]^n``
is where operators get evaluated and equations get solved.  Everything outside the
outer box is described by a tail object instead of stored values.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import (ConfigurationError, EmptyRegionError, IncompatibleGridError,
                     UnsupportedDimensionError, UnsupportedTailError)

_INT_TOL = 1e-9


def _as_int_ratio(a, h, what):
    r = a / h
    k = int(round(r))
    if abs(r - k) > _INT_TOL * max(1.0, abs(r)):
        raise ConfigurationError(f"{what}={a!r} is not an integer multiple of h={h!r}")
    return k


@dataclass(frozen=True)
class GridSpec:
    n: int
    R_dom: float
    R_ext: float
    h: float

    @property
    def m_dom(self) -> int:
        return int(round(self.R_dom / self.h))

    @property
    def m_ext(self) -> int:
        return int(round(self.R_ext / self.h))

    @property
    def points_per_axis(self) -> int:
        return 2 * self.m_ext + 1

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.n

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.n

    @property
    def axis(self) -> np.ndarray:
        return (np.arange(self.points_per_axis) - self.m_ext) * self.h

    @property
    def origin_index(self) -> tuple:
        return (self.m_ext,) * self.n

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(N,)`` for n=1 and ``(N, N, 2)`` for n=2."""
        ax = self.axis
        if self.n == 1:
            return ax.copy()
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def radii(self) -> np.ndarray:
        c = self.coords()
        return np.abs(c) if self.n == 1 else np.linalg.norm(c, axis=-1)

    def index_of(self, x) -> int:
        """Index of a 1D node given its coordinate."""
        if self.n != 1:
            raise UnsupportedDimensionError("index_of is defined for n=1 grids")
        k = (float(x) + self.R_ext) / self.h
        i = int(round(k))
        if abs(k - i) > 1e-7 or not 0 <= i < self.points_per_axis:
            raise ConfigurationError(f"x={x!r} is not a node of the grid")
        return i

    def to_dict(self) -> dict:
        return {"n": self.n, "R_dom": self.R_dom, "R_ext": self.R_ext, "h": self.h}


def make_grid(n, R_dom, R_ext, h) -> GridSpec:
    if n not in (1, 2):
        raise UnsupportedDimensionError(f"dimension n={n!r} not supported (use 1 or 2)")
    if not h > 0:
        raise ConfigurationError("grid spacing h must be positive")
    if not 0 < R_dom:
        raise ConfigurationError("R_dom must be positive")
    _as_int_ratio(R_dom, h, "R_dom")
    _as_int_ratio(R_ext, h, "R_ext")
    if R_ext < 2 * R_dom - _INT_TOL:
        raise ConfigurationError("R_ext must be at least 2*R_dom")
    return GridSpec(int(n), float(R_dom), float(R_ext), float(h))


# ----------------------------------------------------------------------------- tails

class Tail:
    """Values of a function outside the outer box ``|x|_inf > R_ext``."""

    kind = "abstract"

    def values(self, x) -> np.ndarray:
        raise NotImplementedError

    def scaled(self, c) -> "Tail":
        raise NotImplementedError

    def sup(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroTail(Tail):
    kind = "zero"

    def values(self, x):
        return np.zeros(np.shape(x)[:-1] if np.ndim(x) > 1 else np.shape(x))

    def scaled(self, c):
        return self

    def sup(self):
        return 0.0

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class ConstantTail(Tail):
    """Constant ``value`` outside the box, optionally only up to ``radius`` (zero beyond)."""

    value: float
    radius: float | None = None
    kind = "constant"

    def values(self, x):
        x = np.asarray(x, dtype=float)
        r = np.abs(x) if x.ndim <= 1 else np.linalg.norm(x, axis=-1)
        out = np.full(r.shape, float(self.value))
        if self.radius is not None:
            out[r >= self.radius] = 0.0
        return out

    def scaled(self, c):
        return ConstantTail(self.value * c, self.radius)

    def sup(self):
        return abs(self.value)

    def to_dict(self):
        return {"kind": "constant", "value": self.value, "radius": self.radius}


ANALYTIC_TAILS: dict[str, Callable] = {"cos": np.cos, "sin": np.sin}


@dataclass(frozen=True)
class AnalyticTail(Tail):
    """Tail given by an evaluator.  ``mean`` is the far-field average used beyond the
    truncation radius of oscillatory tail integrals; ``bound`` bounds ``|fn|``;
    ``support``, when known, is a radius beyond which ``fn`` vanishes."""

    fn: Callable
    mean: float = 0.0
    bound: float = math.inf
    name: str | None = None
    support: float | None = None
    kind = "analytic"

    def values(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def scaled(self, c):
        fn = self.fn
        return AnalyticTail(lambda x: c * fn(x), self.mean * c, abs(c) * self.bound,
                            support=self.support)

    def sup(self):
        return self.bound

    def to_dict(self):
        if self.name is None:
            raise UnsupportedTailError("anonymous analytic tails cannot be serialized")
        return {"kind": "analytic", "name": self.name, "mean": self.mean, "bound": self.bound}


def tail_from_dict(d) -> Tail:
    kind = d.get("kind", "zero")
    if kind == "zero":
        return ZeroTail()
    if kind == "constant":
        return ConstantTail(float(d["value"]), d.get("radius"))
    if kind == "analytic":
        name = d["name"]
        if name not in ANALYTIC_TAILS:
            raise UnsupportedTailError(f"unknown analytic tail {name!r}")
        return AnalyticTail(ANALYTIC_TAILS[name], float(d.get("mean", 0.0)),
                            float(d.get("bound", math.inf)), name)
    raise UnsupportedTailError(f"unknown tail kind {kind!r}")


def _combine_tails(t1: Tail, t2: Tail, a: float, b: float) -> Tail:
    """Tail of ``a*f1 + b*f2``."""
    if isinstance(t2, ZeroTail) or b == 0:
        return t1.scaled(a)
    if isinstance(t1, ZeroTail) or a == 0:
        return t2.scaled(b)
    if isinstance(t1, ConstantTail) and isinstance(t2, ConstantTail) and t1.radius == t2.radius:
        return ConstantTail(a * t1.value + b * t2.value, t1.radius)
    r1, r2 = tail_support(t1), tail_support(t2)
    return AnalyticTail(lambda x: a * t1.values(x) + b * t2.values(x),
                        mean=a * getattr(t1, "mean", getattr(t1, "value", 0.0))
                        + b * getattr(t2, "mean", getattr(t2, "value", 0.0)),
                        bound=abs(a) * t1.sup() + abs(b) * t2.sup(),
                        support=None if r1 is None or r2 is None else max(r1, r2))


def tail_support(t: Tail) -> float | None:
    """Radius beyond which the tail vanishes (0 for the zero tail), or None if unknown."""
    if isinstance(t, ZeroTail):
        return 0.0
    if isinstance(t, ConstantTail):
        return t.radius if t.value != 0 else 0.0
    return getattr(t, "support", None)


# ----------------------------------------------------------------------------- functions

@dataclass(frozen=True, eq=False)
class GridFunction:
    spec: GridSpec
    values: np.ndarray
    tail: Tail = field(default_factory=ZeroTail)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.spec.shape:
            if v.size == self.spec.size:
                v = v.reshape(self.spec.shape)
            else:
                raise ConfigurationError(
                    f"value count {v.size} does not match grid node count {self.spec.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, spec: GridSpec, fn, tail: Tail | None = None) -> "GridFunction":
        return cls(spec, np.asarray(fn(spec.coords()), dtype=float), tail or ZeroTail())

    @classmethod
    def constant(cls, spec: GridSpec, c: float, with_tail: bool = True) -> "GridFunction":
        tail = ConstantTail(float(c)) if (with_tail and c != 0) else ZeroTail()
        return cls(spec, np.full(spec.shape, float(c)), tail)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridFunction":
        return cls(spec, np.zeros(spec.shape), ZeroTail())

    def with_values(self, values, tail: Tail | None = None) -> "GridFunction":
        return GridFunction(self.spec, values, self.tail if tail is None else tail)

    def _check(self, other):
        if not isinstance(other, GridFunction) or other.spec != self.spec:
            raise IncompatibleGridError("grid functions live on different grids")

    def __add__(self, other):
        if np.isscalar(other):
            return self + GridFunction.constant(self.spec, other)
        self._check(other)
        return GridFunction(self.spec, self.values + other.values,
                            _combine_tails(self.tail, other.tail, 1.0, 1.0))

    def __sub__(self, other):
        if np.isscalar(other):
            return self + (-other)
        self._check(other)
        return GridFunction(self.spec, self.values - other.values,
                            _combine_tails(self.tail, other.tail, 1.0, -1.0))

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return GridFunction(self.spec, self.values * c, self.tail.scaled(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def at(self, x) -> float:
        return float(self.values[self.spec.index_of(x)])

    def padded(self, pad: int) -> np.ndarray:
        """1D values extended by ``pad`` nodes on each side, filled from the tail."""
        if self.spec.n != 1:
            raise UnsupportedDimensionError("padding is implemented for n=1")
        h, m = self.spec.h, self.spec.m_ext
        if pad == 0:
            return np.asarray(self.values)
        left = (np.arange(-m - pad, -m)) * h
        right = (np.arange(m + 1, m + pad + 1)) * h
        return np.concatenate([self.tail.values(left), self.values, self.tail.values(right)])

    def sup_norm(self, region: "Box | None" = None) -> float:
        v = self.values if region is None else self.values[region.mask(self.spec)]
        if v.size == 0:
            raise EmptyRegionError("region contains no grid nodes")
        return float(np.max(np.abs(v)))

    # ---- serialization
    def save(self, csv_path) -> None:
        """Write ``x[,y],value`` CSV plus a JSON sidecar with grid and tail descriptor."""
        csv_path = Path(csv_path)
        coords = self.spec.coords().reshape(-1, self.spec.n)
        vals = self.values.reshape(-1)
        header = ["x", "value"] if self.spec.n == 1 else ["x", "y", "value"]
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for c, v in zip(coords, vals):
                w.writerow([repr(float(t)) for t in c] + [repr(float(v))])
        sidecar = {"grid": self.spec.to_dict(), "tail": self.tail.to_dict()}
        csv_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, csv_path) -> "GridFunction":
        csv_path = Path(csv_path)
        side = json.loads(csv_path.with_suffix(".json").read_text())
        g = side["grid"]
        spec = make_grid(g["n"], g["R_dom"], g["R_ext"], g["h"])
        with csv_path.open() as fh:
            rows = list(csv.reader(fh))
        vals = np.array([float(r[-1]) for r in rows[1:]])
        return cls(spec, vals, tail_from_dict(side.get("tail", {})))


# ----------------------------------------------------------------------------- regions

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    open: bool = False

    @classmethod
    def ball(cls, r: float, n: int = 1, open: bool = False) -> "Box":
        return cls((-r,) * n, (r,) * n, open)

    @property
    def n(self) -> int:
        return len(self.lo)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or (self.n == 1 and x.shape[-1:] != (1,)):
            x = x[..., None]
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        eps = 1e-12 * max(1.0, float(np.max(np.abs(hi))))
        if self.open:
            inside = (x > lo + eps) & (x < hi - eps)
        else:
            inside = (x >= lo - eps) & (x <= hi + eps)
        return np.all(inside, axis=-1)

    def mask(self, spec: GridSpec) -> np.ndarray:
        if spec.n != self.n:
            raise IncompatibleGridError("region and grid have different dimensions")
        return self.contains(spec.coords())

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))


# ----------------------------------------------------------------------------- moduli

@dataclass(frozen=True, eq=False)
class Modulus:
    """Modulus of continuity: ``fn`` maps nonnegative reals to nonnegative reals."""

    fn: Callable
    descriptor: dict = field(default_factory=dict)

    def __call__(self, t):
        return self.fn(np.asarray(t, dtype=float))

    @classmethod
    def linear(cls, slope: float) -> "Modulus":
        return cls(lambda t: slope * t, {"type": "linear", "slope": slope})

    @classmethod
    def power(cls, exponent: float, coef: float = 1.0) -> "Modulus":
        return cls(lambda t: coef * np.power(t, exponent),
                   {"type": "power", "exponent": exponent, "coef": coef})

    @classmethod
    def zero(cls) -> "Modulus":
        return cls(lambda t: 0.0 * t, {"type": "zero"})

    @classmethod
    def from_samples(cls, ts, ws, safety: float = 1.0) -> "Modulus":
        """Least concave majorant of sampled ``(t, w(t))`` pairs, linear through the origin
        below the first sample and constant past the last one."""
        ts = np.concatenate([[0.0], np.asarray(ts, dtype=float)])
        ws = np.concatenate([[0.0], np.maximum.accumulate(np.asarray(ws, dtype=float))]) * safety
        hull = [0]
        for k in range(1, len(ts)):
            while len(hull) >= 2:
                i, j = hull[-2], hull[-1]
                # drop j if it lies on or below the chord i -> k
                if (ws[j] - ws[i]) * (ts[k] - ts[i]) <= (ws[k] - ws[i]) * (ts[j] - ts[i]):
                    hull.pop()
                else:
                    break
            hull.append(k)
        ht, hw = ts[hull], ws[hull]
        return cls(lambda t: np.interp(t, ht, hw),
                   {"type": "sampled", "t": ht.tolist(), "w": hw.tolist()})

    def to_dict(self) -> dict:
        return dict(self.descriptor)

    def validate(self, ts=None) -> dict:
        """Sampled checks of ``w(0) = 0``, monotonicity and midpoint concavity."""
        ts = np.linspace(0.0, 2.0, 201) if ts is None else np.sort(np.asarray(ts, dtype=float))
        w = np.asarray(self(ts), dtype=float)
        tol = 1e-12 * max(1.0, float(np.max(np.abs(w))))
        zero_ok = abs(float(self(0.0))) <= tol
        mono_ok = bool(np.all(np.diff(w) >= -tol))
        a, b = ts[:-2], ts[2:]
        mid = np.asarray(self(0.5 * (a + b)))
        conc_ok = bool(np.all(mid >= 0.5 * (self(a) + self(b)) - tol))
        return {"zero_at_origin": zero_ok, "nondecreasing": mono_ok, "concave": conc_ok,
                "ok": zero_ok and mono_ok and conc_ok}


def modulus_of(f: GridFunction, region: Box | None = None, max_lag: int | None = None,
               safety: float = 1.0) -> Modulus:
    """Sampled modulus of a 1D grid function over the nodes of ``region``."""
    if f.spec.n != 1:
        raise UnsupportedDimensionError("sampled moduli are implemented for n=1")
    v = f.values if region is None else f.values[region.mask(f.spec)]
    return sampled_modulus(v[None, :], f.spec.h, max_lag, safety)


def sampled_modulus(values: np.ndarray, h: float, max_lag: int | None = None,
                    safety: float = 1.0) -> Modulus:
    """Common modulus of a family of 1D node sequences (rows of ``values``)."""
    values = np.atleast_2d(values)
    m = values.shape[1]
    if m < 2:
        return Modulus.zero()
    K = m - 1 if max_lag is None else min(max_lag, m - 1)
    lags = np.arange(1, K + 1)
    osc = np.array([np.max(np.abs(values[:, k:] - values[:, :-k])) for k in lags])
    return Modulus.from_samples(lags * h, osc, safety)


# ----------------------------------------------------------------------------- norms

def _trapezoid_weights(spec: GridSpec) -> np.ndarray:
    w1 = np.full(spec.points_per_axis, spec.h)
    w1[[0, -1]] *= 0.5
    if spec.n == 1:
        return w1
    return np.outer(w1, w1)


def _outer_weight_integral(n, s, R, radius=None) -> float:
    """Integral of ``1/(1+|x|^{n+2s})`` over the complement of ``[-R, R]^n``."""
    p = n + 2 * s
    w = lambda r: 1.0 / (1.0 + r ** p)
    if n == 1:
        upper = np.inf if radius is None else radius
        if upper <= R:
            return 0.0
        val, _ = integrate.quad(w, R, upper, limit=200)
        return 2.0 * val
    if radius is not None:
        raise UnsupportedTailError("truncated constant tails are not integrable in closed form for n=2")
    total = (2 * np.pi) * (np.pi / p) / np.sin(2 * np.pi / p)
    inner, _ = integrate.dblquad(lambda y, x: 1.0 / (1.0 + np.hypot(x, y) ** p), -R, R, -R, R)
    return total - inner


def weighted_l1_norm(f: GridFunction, s: float) -> float:
    """Approximate ``int |f| w_s`` with ``w_s = 1/(1+|x|^{n+2s})``; constant tails are
    integrated analytically."""
    if isinstance(f.tail, AnalyticTail) and (f.tail.support is None or f.spec.n != 1):
        raise UnsupportedTailError("analytic tails carry no integrability certificate")
    if not np.all(np.isfinite(f.values)):
        raise ConfigurationError("grid function has non-finite values")
    spec = f.spec
    w = 1.0 / (1.0 + spec.radii() ** (spec.n + 2 * s))
    total = float(np.sum(np.abs(f.values) * w * _trapezoid_weights(spec)))
    if isinstance(f.tail, AnalyticTail) and f.tail.support > spec.R_ext:
        # compactly supported tail: trapezoid on a grid four times finer than the box grid
        r = np.linspace(spec.R_ext, f.tail.support,
                        max(2, int(np.ceil(4 * (f.tail.support - spec.R_ext) / spec.h)) + 1))
        wr = 1.0 / (1.0 + r ** (1 + 2 * s))
        both = np.abs(f.tail.values(r)) + np.abs(f.tail.values(-r))
        total += float(np.trapezoid(both * wr, r))
    if isinstance(f.tail, ConstantTail) and f.tail.value != 0:
        total += abs(f.tail.value) * _outer_weight_integral(spec.n, s, spec.R_ext, f.tail.radius)
    return total


def holder_seminorm(f: GridFunction, alpha: float, region: Box) -> float:
    """Brute-force ``max |f(x)-f(y)| / |x-y|^alpha`` over node pairs inside ``region``."""
    mask = region.mask(f.spec)
    pts = f.spec.coords()[mask].reshape(-1, f.spec.n)
    vals = f.values[mask].reshape(-1)
    if vals.size < 2:
        raise EmptyRegionError("region needs at least two grid nodes")
    best = 0.0
    chunk = max(1, 4_000_000 // vals.size)
    for i0 in range(0, vals.size, chunk):
        p = pts[i0:i0 + chunk]
        d = np.linalg.norm(p[:, None, :] - pts[None, :, :], axis=-1)
        dv = np.abs(vals[i0:i0 + chunk, None] - vals[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, dv / np.where(d > 0, d, 1.0) ** alpha, 0.0)
        best = max(best, float(q.max()))
    return best


def sup_distance(f: GridFunction, g: GridFunction, region: Box | None = None) -> float:
    if f.spec != g.spec:
        raise IncompatibleGridError("grid functions live on different grids")
    diff = np.abs(f.values - g.values)
    if region is not None:
        diff = diff[region.mask(f.spec)]
    if diff.size == 0:
        raise EmptyRegionError("region contains no grid nodes")
    return float(diff.max())
