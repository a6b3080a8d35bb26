"""Smooth approximation of an Isaacs problem.

For each ``eps``: mollify kernels and zeroth-order terms, solve the strong problem, mollify
the solution, reduce the inf-sup to finitely many entries chosen on a point net, and replace
the min/max by a smooth nested log-sum-exp.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigurationError, EmptyFamilyError, NumericError, ReductionError,
                     ResolutionError, StageError)
from .grid import (Box, ConstantTail, GridFunction, Modulus, ZeroTail, sampled_modulus,
                   sup_distance, weighted_l1_norm)
from .mollify import convolve_callable, mollify_function, mollify_kernel
from .operators import (IsaacsSpec, infsup, isaacs_entries, make_stencil, zeroth_values)
from .solver import SolveConfig, solve_dirichlet

log = logging.getLogger(__name__)

EVAL_RADIUS = 0.75


# ----------------------------------------------------------------------------- step 1

def _mollify_zeroth(c, eps: float):
    if isinstance(c, GridFunction):
        return GridFunction(c.spec, mollify_function(c, eps).values, c.tail)
    if callable(c):
        return convolve_callable(c, eps, 1)
    return float(c)


def build_ihat(I: IsaacsSpec, eps: float) -> IsaacsSpec:
    """Mollified kernels (with implanted power singularity) and mollified zeroth terms."""
    ks = tuple(tuple(mollify_kernel(K, eps) for K in row) for row in I.kernels)
    cs = tuple(tuple(_mollify_zeroth(c, eps) for c in row) for row in I.zeroth)
    return IsaacsSpec(ks, cs, I.modulus)


def fold_rhs(I: IsaacsSpec, f) -> IsaacsSpec:
    """``J(., x) = I(., x) - f(x)`` as an Isaacs family with zeroth terms ``c_ab - f``."""
    def minus(c):
        if isinstance(f, (int, float)) and not isinstance(c, GridFunction) and not callable(c):
            return float(c) - float(f)
        if isinstance(f, (int, float)) and callable(c) and not isinstance(c, GridFunction):
            return lambda x, c=c: c(x) - float(f)
        spec = f.spec if isinstance(f, GridFunction) else c.spec
        cv = zeroth_values(c, spec, np.arange(spec.size))
        fv = zeroth_values(f, spec, np.arange(spec.size))
        tail = ZeroTail()
        if np.all(cv - fv == (cv - fv)[0]):
            tail = ConstantTail(float((cv - fv)[0]))
        return GridFunction(spec, cv - fv, tail)

    return IsaacsSpec(I.kernels, tuple(tuple(minus(c) for c in row) for row in I.zeroth), I.modulus)


def strong_region(eps: float, spec) -> Box:
    """Open ball on which the strong problem is solved; wide enough that mollifying the
    strong solution at scale ``eps`` only sees solved values on ``B_{3/4}``."""
    return Box.ball(min(EVAL_RADIUS + eps, spec.R_dom), 1, open=True)


def approximate_by_strong(I: IsaacsSpec, u: GridFunction, f, eps: float,
                          cfg: SolveConfig | None = None, region: Box | None = None):
    """``u^(eps)``: solves ``Ihat_eps(v) = f * phi_eps`` with exterior data ``(u chi_{1/eps}) * phi_eps``.

    Returns the solve result (its ``u`` is ``u^(eps)``).
    """
    J_hat = build_ihat(fold_rhs(I, f), eps)
    g = mollify_function(u, eps, 1.0 / eps)
    region = region or strong_region(eps, u.spec)
    return solve_dirichlet(J_hat, 0.0, g, region, cfg)


# ----------------------------------------------------------------------------- step 2

def covering_radius(eps: float, modulus: Modulus, diameter: float, iters: int = 200) -> float:
    """Largest ``zeta <= diameter`` with ``modulus(zeta) <= eps / 4`` (bisection)."""
    target = eps / 4.0
    if float(modulus(diameter)) <= target:
        return float(diameter)
    lo, hi = 0.0, float(diameter)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if float(modulus(mid)) <= target:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class PointNet:
    nodes: np.ndarray      # grid node indices
    zeta: float

    @property
    def points(self):
        return self.nodes


def select_grid_points(eps: float, region: Box, modulus: Modulus, spec) -> PointNet:
    """Grid nodes of ``region`` forming a net with covering radius ``zeta``,
    ``modulus(zeta) <= eps / 4``."""
    region_nodes = np.flatnonzero(region.mask(spec))
    if region_nodes.size == 0:
        raise ConfigurationError("region contains no grid nodes")
    xs = spec.axis[region_nodes]
    diam = float(xs.max() - xs.min())
    zeta = covering_radius(eps, modulus, diam)
    if zeta >= diam:
        centre = region_nodes[np.argmin(np.abs(xs - 0.5 * (xs.max() + xs.min())))]
        return PointNet(np.array([centre]), zeta)
    stride = int(math.floor(2.0 * zeta / spec.h + 1e-9))
    if stride < 1:
        raise ResolutionError(
            f"covering radius {zeta:.3g} is below the grid resolution h/2={spec.h / 2:.3g}; refine h")
    half = stride // 2
    pos = list(range(half, region_nodes.size, stride))
    if region_nodes.size - 1 - pos[-1] > half:
        pos.append(region_nodes.size - 1)
    return PointNet(region_nodes[np.array(pos)], zeta)


def family_modulus(Ihat: IsaacsSpec, u_eps: GridFunction, region: Box, safety: float = 2.0) -> Modulus:
    """Sampled common modulus of ``x -> -L_ab u_eps(x) + c_ab(x)`` and ``x -> c_ab(x)``."""
    nodes = np.flatnonzero(region.mask(u_eps.spec))
    st = make_stencil(u_eps.spec, nodes)
    Eu = isaacs_entries(Ihat, u_eps, st).reshape(-1, nodes.size)
    E0 = isaacs_entries(Ihat, GridFunction.zeros(u_eps.spec), st).reshape(-1, nodes.size)
    return sampled_modulus(np.vstack([Eu, E0]), u_eps.spec.h, safety=safety)


@dataclass(frozen=True, eq=False)
class FiniteInfSup:
    """``I*(v, x) = min_i max_j (-L_{pair(i,j)} v + c_{pair(i,j)})`` over an N x N table of
    index pairs drawn from a source family."""

    source: IsaacsSpec
    row_b: np.ndarray      # (N,) b index of each row
    col_a: np.ndarray      # (N, N) a index of each entry
    net: PointNet | None = None

    @property
    def N(self) -> int:
        return int(self.row_b.size)

    @property
    def pair_ids(self) -> np.ndarray:
        """Flattened source index ``b * |A| + a`` of each entry."""
        return self.row_b[:, None] * self.source.shape[1] + self.col_a

    def counts(self) -> np.ndarray:
        """``(N, P)`` multiplicity of every source pair in every row."""
        P = self.source.shape[0] * self.source.shape[1]
        ids = self.pair_ids
        out = np.zeros((self.N, P))
        np.add.at(out, (np.repeat(np.arange(self.N), self.N), ids.ravel()), 1.0)
        return out

    def provenance(self) -> list:
        return [[(int(a), int(b)) for a in row] for b, row in zip(self.row_b, self.col_a)]

    def pair_values(self, v: GridFunction, st) -> np.ndarray:
        return isaacs_entries(self.source, v, st).reshape(-1, st.nodes.size)

    def eval_grid(self, v: GridFunction, st) -> np.ndarray:
        return eval_F_counts(self.counts(), self.pair_values(v, st))

    @property
    def translation_invariant(self) -> bool:
        return _used_pairs_ti(self.source, np.unique(self.pair_ids))

    @property
    def sup_only(self) -> bool:
        """All rows carry the same entries, so the inf over rows is trivial."""
        c = self.counts()
        return bool(np.all(c == c[0]))

    def to_dict(self) -> dict:
        return {"N": self.N, "row_b": self.row_b.tolist(), "col_a": self.col_a.tolist(),
                "net_nodes": None if self.net is None else self.net.nodes.tolist(),
                "zeta": None if self.net is None else self.net.zeta}


def _zeroth_is_constant(c) -> bool:
    if isinstance(c, GridFunction):
        v = np.asarray(c.values)
        return bool(np.ptp(v) <= 1e-12 * max(1.0, float(np.max(np.abs(v)))))
    return not callable(c)


def _used_pairs_ti(I: IsaacsSpec, ids) -> bool:
    na = I.shape[1]
    for p in ids:
        b, a = divmod(int(p), na)
        if not I.kernels[b][a].translation_invariant or not _zeroth_is_constant(I.zeroth[b][a]):
            return False
    return True


def eval_F_counts(counts: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """``min_i max_{p in row i} vals[p]`` per node; ``vals`` is ``(P, nodes)``."""
    present = counts[:, :, None] > 0
    rowmax = np.where(present, vals[None, :, :], -np.inf).max(axis=1)
    return rowmax.min(axis=0)


def finite_infsup_reduce(Ihat: IsaacsSpec, u_eps: GridFunction, net: PointNet, eps: float,
                         region: Box | None = None) -> FiniteInfSup:
    """Select ``b_i`` / ``b_{N+i}`` (minimizers for ``u_eps`` / ``0`` at the net points) and
    ``a_ij`` (maximizers within row ``i`` at the net points), then verify on ``region``."""
    spec = u_eps.spec
    region = region or Box.ball(EVAL_RADIUS, 1)
    zero = GridFunction.zeros(spec)
    st_net = make_stencil(spec, net.nodes)
    Eu = isaacs_entries(Ihat, u_eps, st_net)        # (nb, na, Ne)
    E0 = isaacs_entries(Ihat, zero, st_net)
    _, _, bu = infsup(Eu)
    _, _, b0 = infsup(E0)
    row_b = np.concatenate([bu, b0])
    # a_ij: argmax over a of entry (row_b[i], a) at net point j, for u_eps (j < Ne) and 0
    au = np.argmax(Eu[row_b], axis=1)               # (N, Ne)
    a0 = np.argmax(E0[row_b], axis=1)
    col_a = np.concatenate([au, a0], axis=1)
    red = FiniteInfSup(Ihat, row_b, col_a, net)
    nodes = np.flatnonzero(region.mask(spec))
    st = make_stencil(spec, nodes)
    counts = red.counts()
    for v in (u_eps, zero):
        E = isaacs_entries(Ihat, v, st)
        exact = infsup(E)[0]
        star = eval_F_counts(counts, E.reshape(-1, nodes.size))
        gap = np.abs(star - exact)
        k = int(np.argmax(gap))
        if gap[k] > eps:
            raise ReductionError(f"reduced operator misses by {gap[k]:.3g} > eps={eps:g} at x={spec.axis[nodes[k]]:g}",
                                 worst_point=float(spec.axis[nodes[k]]), gap=float(gap[k]))
    return red


# ----------------------------------------------------------------------------- step 3

def eval_F(matrix) -> float:
    """``min_i max_j x_ij``."""
    m = np.asarray(matrix, float)
    return float(m.max(axis=1).min())


def _lse(x, tau, axis):
    """``tau log sum exp(x / tau)`` along ``axis``, shifted for overflow safety."""
    m = np.max(x, axis=axis, keepdims=True)
    z = np.exp((x - m) / tau)
    s = z.sum(axis=axis, keepdims=True)
    return (m + tau * np.log(s)).squeeze(axis), z / s


def smooth_value_and_weights(matrix, tau: float):
    """Nested soft-min over rows of soft-max over columns and the chain-rule weights."""
    x = np.asarray(matrix, float)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite entries")
    rows, q = _lse(x, tau, axis=1)                  # soft-max per row, weights q_ij
    val, p = _lse(-rows, tau, axis=0)                # soft-min = -lse(-rows)
    M = p[:, None] * q
    return float(-val), M


@dataclass(frozen=True, eq=False)
class SmoothInfSup:
    base: FiniteInfSup
    tau: float

    def eval_counts(self, vals: np.ndarray):
        """Smoothed value per node from pair values ``(P, nodes)`` using row counts."""
        return smooth_counts(self.base.counts(), vals, self.tau)

    def eval_grid(self, v: GridFunction, st) -> np.ndarray:
        return self.eval_counts(self.base.pair_values(v, st))[0]

    def weights(self, v: GridFunction, st) -> np.ndarray:
        """Aggregated simplex weights per source pair, ``(P, nodes)``."""
        return self.eval_counts(self.base.pair_values(v, st))[1]

    @property
    def translation_invariant(self) -> bool:
        return self.base.translation_invariant

    @property
    def sup_only(self) -> bool:
        return self.base.sup_only

    def to_dict(self):
        d = self.base.to_dict()
        d["tau"] = self.tau
        return d


def smooth_counts(counts: np.ndarray, vals: np.ndarray, tau: float):
    """Nested log-sum-exp where row ``i`` holds ``counts[i, p]`` copies of ``vals[p]``.

    Returns values per node and the aggregated weights ``(P, nodes)``; the weight of pair
    ``p`` is the sum of ``M_ij`` over entries carrying ``p``.
    """
    if not np.all(np.isfinite(vals)):
        raise NumericError("non-finite entries")
    present = counts[:, :, None] > 0
    m = np.where(present, vals[None], -np.inf).max(axis=1, keepdims=True)   # per-row shift
    z = counts[:, :, None] * np.exp(np.where(present, vals[None] - m, -np.inf) / tau)  # (N, P, nodes)
    zs = z.sum(axis=1)                                           # (N, nodes)
    rows = m[:, 0] + tau * np.log(zs)
    mr = (-rows).max(axis=0, keepdims=True)
    w = np.exp((-rows - mr) / tau)
    ws = w.sum(axis=0, keepdims=True)
    val = -(mr + tau * np.log(ws))[0]
    p = w / ws
    weights = np.einsum("in,ipn->pn", p, z / zs[:, None, :])
    return val, weights


def eval_F_smooth(op, matrix):
    """``(value, M)`` for an explicit matrix; ``op`` is a SmoothInfSup or a temperature."""
    tau = op.tau if isinstance(op, SmoothInfSup) else float(op)
    return smooth_value_and_weights(matrix, tau)


def smoothing_temperature(N: int, eps: float) -> float:
    """``tau = eps / (2 ln N)`` so that the smoothing error ``2 tau ln N`` is at most ``eps``."""
    if N < 1:
        raise EmptyFamilyError("empty family")
    return eps / (2.0 * math.log(N)) if N > 1 else eps


def smooth_operator(base: FiniteInfSup, eps: float) -> SmoothInfSup:
    if base.N == 0:
        raise EmptyFamilyError("finite inf-sup has no entries")
    return SmoothInfSup(base, smoothing_temperature(base.N, eps))


# ----------------------------------------------------------------------------- pipeline

@dataclass(frozen=True, eq=False)
class RegularizationStep:
    epsilon: float
    u_strong: GridFunction
    u_eps: GridFunction
    f_eps: GridFunction
    op: SmoothInfSup
    diagnostics: dict = field(default_factory=dict)

    def I_eps_grid(self, v: GridFunction, st) -> np.ndarray:
        """``I_eps(v, x) = F^r(entries of the folded family) + f_eps(x)``."""
        return self.op.eval_grid(v, st) + np.asarray(self.f_eps.values)[st.nodes]


def _as_gf(f, spec) -> GridFunction:
    if isinstance(f, GridFunction):
        return f
    if callable(f):
        return GridFunction.sample(spec, f)
    return GridFunction.constant(spec, float(f))


def _stage(name, eps, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:      # noqa: BLE001 - every failure is re-tagged with its stage
        raise StageError(name, eps, exc) from exc


def regularize_step(I: IsaacsSpec, u: GridFunction, f, eps: float,
                    cfg: SolveConfig | None = None, s_weight: float | None = None,
                    max_refinements: int = 4) -> RegularizationStep:
    """One pass of the construction at scale ``eps``."""
    spec = u.spec
    fg = _as_gf(f, spec)
    cfg = cfg or SolveConfig()
    res = _stage("strong-solve", eps, approximate_by_strong, I, u, fg, eps, cfg)
    u_strong = res.u
    u_eps = _stage("mollify-solution", eps, mollify_function, u_strong, eps, 1.0 / eps)
    f_eps = _stage("mollify-rhs", eps, mollify_function, fg, eps)
    J_hat = _stage("build-ihat", eps, lambda: build_ihat(fold_rhs(I, fg), eps))
    region = Box.ball(EVAL_RADIUS, 1)
    safety = 2.0
    for attempt in range(max_refinements + 1):
        mod = _stage("modulus", eps, family_modulus, J_hat, u_eps, region, safety)
        net = _stage("select-points", eps, select_grid_points, eps, region, mod, spec)
        try:
            base = finite_infsup_reduce(J_hat, u_eps, net, eps, region)
            break
        except ReductionError as exc:
            if attempt == max_refinements:
                raise StageError("reduce", eps, exc) from exc
            log.info("reduction missed by %.3g at x=%.3g; tightening the modulus", exc.gap, exc.worst_point)
            safety *= 2.0
    op = _stage("smooth", eps, smooth_operator, base, eps)
    diag = _stage("diagnostics", eps, step_diagnostics, I, u, fg, eps, u_eps, f_eps, J_hat, op,
                  s_weight if s_weight is not None else I.params.s, res.residual)
    return RegularizationStep(eps, u_strong, u_eps, f_eps, op, diag)


def step_diagnostics(I, u, f, eps, u_eps, f_eps, J_hat, op: SmoothInfSup, s, solve_residual):
    spec = u.spec
    region = Box.ball(EVAL_RADIUS, 1)
    nodes = np.flatnonzero(region.mask(spec))
    st = make_stencil(spec, nodes)
    zero = GridFunction.zeros(spec)
    fe = np.asarray(f_eps.values)[nodes]
    vals_u = op.base.pair_values(u_eps, st)
    vals_0 = op.base.pair_values(zero, st)
    Fr_u, W_u = op.eval_counts(vals_u)
    Fr_0, _ = op.eval_counts(vals_0)
    counts = op.base.counts()
    star_u = eval_F_counts(counts, vals_u)
    star_0 = eval_F_counts(counts, vals_0)
    hat_u = infsup(isaacs_entries(J_hat, u_eps, st))[0]
    hat_0 = infsup(isaacs_entries(J_hat, zero, st))[0]
    I0 = infsup(isaacs_entries(I, zero, st))[0]
    return {
        "epsilon": eps,
        "s": s,
        "sup_error": sup_distance(u_eps, u, region),
        "weighted_l1_error": weighted_l1_norm(u_eps - u, s),
        "operator_residual": float(np.max(np.abs(Fr_u))),
        "zeroth_gap": float(np.max(np.abs(Fr_0 + fe - I0))),
        "reduction_gap_u": float(np.max(np.abs(star_u - hat_u))),
        "reduction_gap_0": float(np.max(np.abs(star_0 - hat_0))),
        "smoothing_gap": float(max(np.max(np.abs(Fr_u - star_u)), np.max(np.abs(Fr_0 - star_0)))),
        "hat_residual": float(np.max(np.abs(hat_u))),
        "solve_residual": float(solve_residual),
        "weight_sum_error": float(np.max(np.abs(W_u.sum(axis=0) - 1.0))),
        "weight_min": float(W_u.min()),
        "N": op.base.N,
        "tau": op.tau,
        "zeta": op.base.net.zeta if op.base.net is not None else None,
        "net_size": int(op.base.net.nodes.size) if op.base.net is not None else None,
        "translation_invariant": op.translation_invariant,
        "sup_only": op.sup_only,
    }


def pipeline(I: IsaacsSpec, u: GridFunction, f, schedule, cfg: SolveConfig | None = None,
             s_weight: float | None = None) -> list:
    """Run :func:`regularize_step` for every ``eps`` of the schedule (in order)."""
    if not len(schedule):
        raise ConfigurationError("empty epsilon schedule")
    return [regularize_step(I, u, f, float(e), cfg, s_weight) for e in schedule]


@dataclass(frozen=True)
class Certification:
    sup_error_nonincreasing: bool
    sup_error_strictly_decreasing: bool
    weighted_l1_decreasing: bool
    operator_residual_ok: bool
    zeroth_gap_ok: bool

    @property
    def passed(self) -> bool:
        return (self.sup_error_nonincreasing and self.weighted_l1_decreasing
                and self.operator_residual_ok and self.zeroth_gap_ok)

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def certify_pipeline(steps, modulus: Modulus | None = None, tol: float = 1e-9,
                     slack: float = 0.10) -> Certification:
    """Checks on a schedule ordered from coarse to fine ``eps``."""
    sup = [st.diagnostics["sup_error"] for st in steps]
    wl1 = [st.diagnostics["weighted_l1_error"] for st in steps]
    pairs = list(zip(sup[:-1], sup[1:]))
    w = modulus or Modulus.zero()
    res_ok = all(st.diagnostics["operator_residual"] <= 3 * st.epsilon + tol for st in steps)
    zg_ok = all(st.diagnostics["zeroth_gap"] <= float(w(st.epsilon)) + st.epsilon + tol for st in steps)
    return Certification(
        sup_error_nonincreasing=all(b <= (1 + slack) * a for a, b in pairs),
        sup_error_strictly_decreasing=all(b < a for a, b in pairs),
        weighted_l1_decreasing=all(b < a for a, b in zip(wl1[:-1], wl1[1:])),
        operator_residual_ok=res_ok, zeroth_gap_ok=zg_ok)
