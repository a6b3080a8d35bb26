"""Weak-convergence gaps, distributional residuals and convergence tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigurationError, IncompatibleGridError, InsufficientDataError,
                     PreconditionError)
from .grid import (Box, ConstantTail, GridFunction, Modulus, ZeroTail, sup_distance,
                   weighted_l1_norm)
from .kernels import bump_profile_fn
from .operators import (IsaacsSpec, apply_linear, as_linear, infsup, isaacs_entries,
                        make_stencil)
from .regularize import EVAL_RADIUS, build_ihat

QUADRATURE_TOL = 1e-10
SUPPORT_RADIUS = 0.75


# ----------------------------------------------------------------------------- weak convergence

def modulus_slope(w: Modulus | None) -> float:
    """Small-scale power of a modulus: 1 for linear, the exponent for powers, inf for zero."""
    if w is None:
        return math.inf
    d = w.descriptor or {}
    kind = d.get("type")
    if kind == "zero" or (kind == "linear" and d.get("slope", 1.0) == 0.0):
        return math.inf
    if kind == "linear":
        return 1.0
    if kind == "power":
        return float(d["exponent"])
    t = np.array([1e-3, 1e-2])
    wt = np.asarray(w(t), float)
    if np.all(wt <= 0):
        return math.inf
    return float(np.log(wt[1] / wt[0]) / np.log(t[1] / t[0]))


def family_moduli(I: IsaacsSpec) -> list:
    out = [] if I.modulus is None else [I.modulus]
    for row in I.kernels:
        for K in row:
            if not K.translation_invariant and K.x_modulus is not None:
                out.append(K.x_modulus)
    return out


@dataclass(frozen=True)
class GapReport:
    epsilons: list
    gaps: list
    slope: float
    reference_slope: float
    constant: float
    s: float
    bound_ok: bool
    slope_ok: bool
    monotone: bool

    @property
    def passed(self) -> bool:
        return self.bound_ok and self.slope_ok

    def rows(self):
        return [{"epsilon": e, "gap": g} for e, g in zip(self.epsilons, self.gaps)]

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        d["kind"] = "gap"
        return d


def fit_slope(eps, gaps) -> float:
    """Least-squares log-log slope; inf when every gap is (numerically) zero."""
    e = np.asarray(eps, float)
    g = np.asarray(gaps, float)
    if np.all(g <= 1e-14):
        return math.inf
    keep = g > 1e-14
    if keep.sum() < 2:
        return math.inf
    return float(np.polyfit(np.log(e[keep]), np.log(g[keep]), 1)[0])


def weak_convergence_gap(I: IsaacsSpec, schedule, v: GridFunction, region: Box,
                         slope_slack: float = 0.2, monotone_slack: float = 0.05) -> GapReport:
    """``sup_region |Ihat_eps(v) - I(v)|`` along the schedule with a fitted decay slope.

    The reference slope is ``min(2 - 2s, slope of omega)`` where ``omega`` combines the
    x-moduli of the kernels and the zeroth-order terms.
    """
    eps = [float(e) for e in schedule]
    if len(eps) < 3:
        raise InsufficientDataError("a rate fit needs at least three epsilon values")
    s = I.params.s
    nodes = np.flatnonzero(region.mask(v.spec))
    st = make_stencil(v.spec, nodes)
    base = infsup(isaacs_entries(I, v, st))[0]
    gaps = []
    for e in eps:
        val = infsup(isaacs_entries(build_ihat(I, e), v, st))[0]
        gaps.append(float(np.max(np.abs(val - base))))
    moduli = family_moduli(I)
    w_slope = min([modulus_slope(w) for w in moduli], default=math.inf)
    ref = min(2.0 - 2.0 * s, w_slope)

    def omega(e):
        return max([float(w(e)) for w in moduli], default=0.0)

    scale = np.array([e ** (2.0 - 2.0 * s) + omega(e) for e in eps])
    C = float(np.max(np.asarray(gaps) / scale))
    slope = fit_slope(eps, gaps)
    order = np.argsort(eps)[::-1]
    g_sorted = np.asarray(gaps)[order]
    monotone = bool(np.all(g_sorted[1:] <= (1 + monotone_slack) * g_sorted[:-1] + 1e-14))
    bound_ok = bool(np.all(np.asarray(gaps) <= C * scale * (1 + 1e-12) + 1e-14))
    return GapReport(eps, gaps, slope, ref, C, s, bound_ok, bool(slope >= ref - slope_slack), monotone)


# ----------------------------------------------------------------------------- distributional

def random_test_function(spec, rng, max_bumps: int = 5, support: float = SUPPORT_RADIUS,
                         min_radius: float = 0.1) -> GridFunction:
    """Superposition of at most ``max_bumps`` smooth bumps supported in ``B_support``."""
    k = int(rng.integers(1, max_bumps + 1))
    x = spec.axis
    vals = np.zeros_like(x)
    for _ in range(k):
        r = rng.uniform(min_radius, support / 2)
        c = rng.uniform(-support + r, support - r)
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)
        vals += amp * bump_profile_fn(np.abs(x - c) / r)
    return GridFunction(spec, vals)


def _tail_constant(u: GridFunction) -> float:
    t = u.tail
    if isinstance(t, ConstantTail) and t.radius is None:
        return float(t.value)
    if isinstance(t, ZeroTail):
        return 0.0
    raise PreconditionError("pairing needs a zero or constant tail")


@dataclass(frozen=True)
class DistributionalReport:
    residual: float
    per_test: list
    seed: int
    test_count: int

    def to_dict(self):
        d = dict(self.__dict__)
        d["kind"] = "distributional"
        return d


def distributional_report(L, u: GridFunction, f: GridFunction, test_count: int = 20,
                          seed: int = 0) -> DistributionalReport:
    """Pairing residuals ``|<u, L phi> - <f, phi>| / ||phi||_1`` for ``L u = f``.

    The constant tail of ``u`` is subtracted first (``L`` annihilates constants and
    ``L phi`` has zero mean), so the pairing only involves stored nodes. ``L phi`` is
    evaluated with the same discrete operator on every node where ``u`` differs from its
    tail constant.
    """
    L = as_linear(L)
    if not L.kernel.translation_invariant:
        raise PreconditionError("the pairing identity needs a translation-invariant kernel")
    spec = u.spec
    if f.spec != spec:
        raise IncompatibleGridError("u and f live on different grids")
    c = _tail_constant(u)
    w = np.asarray(u.values) - c
    active = np.flatnonzero(w != 0.0)
    reach = float(np.max(np.abs(spec.axis[active]))) if active.size else 0.0
    window = spec.R_dom if reach <= spec.R_dom + 1e-12 else spec.R_ext
    st = make_stencil(spec, None, L.quad, window=window)
    h = spec.h
    rng = np.random.default_rng(seed)
    fv = np.asarray(f.values)
    res = []
    for _ in range(test_count):
        phi = random_test_function(spec, rng)
        Lphi = apply_linear(L, phi, st)
        lhs = h * float(np.dot(w[st.nodes], Lphi))
        rhs = h * float(np.dot(fv, phi.values))
        res.append(abs(lhs - rhs) / (h * float(np.sum(np.abs(phi.values)))))
    return DistributionalReport(max(res, default=0.0), res, seed, test_count)


def distributional_residual(L, u: GridFunction, f: GridFunction, test_count: int = 20,
                            seed: int = 0) -> float:
    """Largest normalized pairing residual of ``L u = f`` over seeded random test functions."""
    return distributional_report(L, u, f, test_count, seed).residual


# ----------------------------------------------------------------------------- reporting

COLUMNS = ("epsilon", "sup_error", "weighted_l1_error", "operator_residual", "zeroth_gap")


@dataclass(frozen=True)
class ConvergenceTable:
    rows: list
    flags: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        wr.writeheader()
        for r in self.rows:
            wr.writerow({k: repr(float(r[k])) for k in COLUMNS})
        return buf.getvalue()

    def to_dict(self):
        return {"kind": "convergence", "rows": self.rows, "flags": self.flags}


def _decreasing(col, slack):
    return all(b <= (1 + slack) * a for a, b in zip(col[:-1], col[1:]))


def convergence_report(steps, reference: GridFunction, s: float | None = None,
                       slack: float = 0.10) -> ConvergenceTable:
    """One row per step (sup and weighted-L1 errors against ``reference`` plus the step's
    operator diagnostics) and monotone-decrease flags with relative ``slack``."""
    if not steps:
        raise ConfigurationError("no regularization steps")
    region = Box.ball(EVAL_RADIUS, 1)
    rows = []
    for st in steps:
        if st.u_eps.spec != reference.spec:
            raise IncompatibleGridError("reference and step live on different grids")
        d = st.diagnostics
        sw = s if s is not None else d.get("s", 0.5)
        rows.append({
            "epsilon": float(st.epsilon),
            "sup_error": sup_distance(st.u_eps, reference, region),
            "weighted_l1_error": weighted_l1_norm(st.u_eps - reference, sw),
            "operator_residual": float(d["operator_residual"]),
            "zeroth_gap": float(d["zeroth_gap"]),
        })
    flags = {f"{k}_decreasing": _decreasing([r[k] for r in rows], slack) for k in COLUMNS[1:]}
    flags["sup_error_strictly_decreasing"] = all(
        b < a for a, b in zip([r["sup_error"] for r in rows][:-1], [r["sup_error"] for r in rows][1:]))
    return ConvergenceTable(rows, flags)
