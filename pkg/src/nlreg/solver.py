"""Discrete Dirichlet problems ``I(u, x) = f(x)`` in a region with ``u = g`` outside.

Restricted to the region nodes, every linear operator is affine: ``L_ab u = A_ab u_R + r_ab``
with ``A_ab`` a diagonally dominant M-matrix.  The Isaacs equation then reads
``max_b min_a (A_ab u_R - q_ab) = 0`` with ``q_ab = c_ab - f - r_ab``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigurationError, NonconvergenceError, SchemeError, StencilError)
from .grid import Box, ConstantTail, GridFunction, ZeroTail
from .kernels import EllipticityParams
from .operators import (IsaacsSpec, extremal_minus_grid, extremal_plus_grid, far_differences,
                        infsup, isaacs_grid, kernel_weights, make_stencil, zeroth_values,
                        apply_linear, QuadConfig)

log = logging.getLogger(__name__)

METHODS = ("auto", "policy-iteration", "pseudo-time")


@dataclass(frozen=True)
class SolveConfig:
    method: str = "auto"
    tol: float = 1e-9
    max_iters: int = 200
    pseudo_time_step: float | None = None
    max_time_steps: int = 2_000_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.pseudo_time_step is not None and not self.pseudo_time_step > 0:
            raise ConfigurationError("pseudo_time_step must be positive")


@dataclass(frozen=True, eq=False)
class SolveResult:
    u: GridFunction
    residual: float
    iterations: int
    policy: np.ndarray            # (nodes, 2): attaining (a, b)
    history: list = field(default_factory=list)
    region: Box | None = None
    method: str = ""


# ----------------------------------------------------------------------------- assembly

@dataclass(frozen=True, eq=False)
class Assembled:
    nodes: np.ndarray
    A: np.ndarray      # (nb, na, n, n)
    q: np.ndarray      # (nb, na, n)

    def entries(self, uR):
        """``E[b, a] = -A_ab u + q_ab`` which equals ``-L_ab u + c_ab - f``."""
        return -np.einsum("baij,j->bai", self.A, uR) + self.q


def _as_grid_function(g, spec) -> GridFunction:
    if isinstance(g, GridFunction):
        if g.spec != spec:
            raise ConfigurationError("exterior data lives on a different grid")
        return g
    return GridFunction.constant(spec, float(g))


def assemble(I: IsaacsSpec, f, g: GridFunction, region: Box) -> Assembled:
    spec = g.spec
    if spec.n != 1:
        raise ConfigurationError("the solver is implemented for n=1")
    mask = region.mask(spec)
    if np.any(mask & (np.abs(spec.axis) > spec.R_dom + 1e-12)):
        raise StencilError("region must lie inside the interior box [-R_dom, R_dom]")
    nodes = np.flatnonzero(mask)
    if nodes.size == 0:
        raise ConfigurationError("region contains no grid nodes")
    st = make_stencil(spec, nodes)
    g_out = g.with_values(np.where(mask, 0.0, g.values))
    fv = zeroth_values(f, spec, nodes)
    nb, na = I.shape
    n = nodes.size
    A = np.zeros((nb, na, n, n))
    q = np.zeros((nb, na, n))
    off = nodes[None, :] - nodes[:, None]
    near = (off != 0) & (np.abs(off) <= st.J)
    rows, cols = np.nonzero(near)
    for b in range(nb):
        for a in range(na):
            K = I.kernels[b][a]
            W, T = kernel_weights(K, st)
            _, wf = far_differences(K, g_out, st, QuadConfig())
            Aab = np.zeros((n, n))
            Aab[rows, cols] = -W[rows, np.abs(off[rows, cols]) - 1]
            Aab[np.arange(n), np.arange(n)] = 2.0 * W.sum(axis=1) + 2.0 * wf.sum(axis=1)
            A[b, a] = Aab
            r = apply_linear(K, g_out, st)
            q[b, a] = zeroth_values(I.zeroth[b][a], spec, nodes) - fv - r
    offdiag = A.copy()
    idx = np.arange(n)
    offdiag[..., idx, idx] = 0.0
    if np.any(offdiag > 0) or np.any(A[..., idx, idx] <= 0):
        raise SchemeError("assembled matrix is not an M-matrix")
    return Assembled(nodes, A, q)


# ----------------------------------------------------------------------------- methods

def _residual(asm: Assembled, uR):
    val, a, b = infsup(asm.entries(uR))
    return float(np.max(np.abs(val))) if val.size else 0.0, a, b


def _linear_solve(asm, uR, pa, pb):
    n = uR.size
    idx = np.arange(n)
    M = asm.A[pb, pa, idx, :]
    rhs = asm.q[pb, pa, idx]
    return np.linalg.solve(M, rhs)


def _policy_iteration(asm: Assembled, u0, cfg: SolveConfig):
    """Nested Howard iteration: outer over ``b`` (max), inner over ``a`` (min)."""
    nb, na, n, _ = asm.A.shape
    uR = u0.copy()
    hist = []
    idx = np.arange(n)
    seen = set()
    its = 0
    for outer in range(cfg.max_iters):
        E = asm.entries(uR)
        # G_b(u) = min_a(A u - q) = -max_a E ; outer picks the b maximizing G_b
        amax = np.argmax(E, axis=1)
        rowmax = np.take_along_axis(E, amax[:, None], axis=1)[:, 0]
        pb = np.argmin(rowmax, axis=0)
        res = float(np.max(np.abs(rowmax[pb, idx])))
        hist.append(res)
        if res <= cfg.tol:
            return uR, its, hist, True
        key = pb.tobytes()
        if key in seen and outer > 0 and hist[-1] >= min(hist[:-1]):
            return uR, its, hist, False
        seen.add(key)
        pa = amax[pb, idx]
        for inner in range(cfg.max_iters):
            its += 1
            uR = _linear_solve(asm, uR, pa, pb)
            Eb = asm.entries(uR)[pb, :, idx]          # (n, na)
            new_pa = np.argmax(Eb, axis=1)
            # keep the current choice on ties so the inner loop terminates
            keep = Eb[idx, pa] >= Eb[idx, new_pa] - 1e-14 * (1 + np.abs(Eb[idx, new_pa]))
            new_pa = np.where(keep, pa, new_pa)
            if np.array_equal(new_pa, pa):
                break
            pa = new_pa
    return uR, its, hist, False


def _pseudo_time(asm: Assembled, u0, cfg: SolveConfig, dt=None, check_monotone=True):
    """Explicit marching of ``du/dt = I(u) - f`` with the monotonicity-preserving step."""
    nb, na, n, _ = asm.A.shape
    idx = np.arange(n)
    diag = asm.A[..., idx, idx].max()
    dt = cfg.pseudo_time_step or (1.0 / diag if dt is None else dt)
    if dt * diag > 1.0 + 1e-12:
        raise SchemeError(f"pseudo-time step {dt:g} exceeds the monotonicity bound {1 / diag:g}")
    step = lambda u: u + dt * infsup(asm.entries(u))[0]
    if check_monotone:
        rng = np.random.default_rng(12345)
        for _ in range(3):
            v = rng.standard_normal(n)
            w = v + np.abs(rng.standard_normal(n))
            if np.any(step(v) > step(w) + 1e-10 * (1 + np.abs(step(w)))):
                raise SchemeError("pseudo-time map is not monotone")
    uR = u0.copy()
    hist = []
    for k in range(cfg.max_time_steps):
        val = infsup(asm.entries(uR))[0]
        res = float(np.max(np.abs(val)))
        if k % 100 == 0:
            hist.append(res)
        if res <= cfg.tol:
            hist.append(res)
            return uR, k, hist, True
        uR = uR + dt * val
    return uR, cfg.max_time_steps, hist, False


def solve_dirichlet(I: IsaacsSpec, f, g, region: Box, cfg: SolveConfig | None = None,
                    spec=None) -> SolveResult:
    """Solve ``I(u) = f`` on the grid nodes of ``region`` with ``u = g`` elsewhere.

    Parameters
    ----------
    I : IsaacsSpec
    f : number, callable or GridFunction
        Right-hand side in the region.
    g : GridFunction or number
        Exterior data (grid values outside the region plus the tail).
    region : Box
    cfg : SolveConfig, optional
        ``method='auto'`` runs policy iteration and falls back to pseudo-time marching if
        the policy iteration stalls.

    Returns
    -------
    SolveResult
    """
    cfg = cfg or SolveConfig()
    if not isinstance(g, GridFunction):
        if spec is None:
            spec = f.spec if isinstance(f, GridFunction) else None
        if spec is None:
            raise ConfigurationError("pass a GridFunction for g or f, or a grid spec")
        g = _as_grid_function(g, spec)
    asm = assemble(I, f, g, region)
    mask = region.mask(g.spec)
    u0 = np.asarray(g.values)[asm.nodes].copy()
    method = cfg.method
    if method in ("auto", "policy-iteration"):
        uR, its, hist, ok = _policy_iteration(asm, u0, cfg)
        if not ok and method == "auto":
            log.info("policy iteration stalled (residual %.3g); switching to pseudo-time", hist[-1])
            uR2, its2, hist2, ok = _pseudo_time(asm, uR, cfg)
            uR, its, hist, method = uR2, its + its2, hist + hist2, "pseudo-time"
    else:
        uR, its, hist, ok = _pseudo_time(asm, u0, cfg)
    res, a, b = _residual(asm, uR)
    if not ok and res > cfg.tol:
        raise NonconvergenceError(f"{method} did not reach tol={cfg.tol:g} (residual {res:.3g})", hist)
    vals = np.array(g.values, dtype=float)
    vals[asm.nodes] = uR
    u = GridFunction(g.spec, vals, g.tail)
    return SolveResult(u, res, its, np.stack([a, b], axis=1), hist, region, method)


def residual_supnorm(I: IsaacsSpec, u: GridFunction, f, region: Box) -> float:
    """``sup |I(u, x) - f(x)|`` over the region nodes, by direct operator evaluation."""
    nodes = np.flatnonzero(region.mask(u.spec))
    st = make_stencil(u.spec, nodes)
    val, _, _ = isaacs_grid(I, u, st)
    return float(np.max(np.abs(val - zeroth_values(f, u.spec, nodes))))


# ----------------------------------------------------------------------------- comparison

@dataclass(frozen=True)
class ComparisonReport:
    passed: bool | None
    lhs: float                    # ||u||_inf over the region
    g_sup: float                  # ||g||_inf over the exterior
    C_circ: float
    fitted_C: float | None
    witness: float | None         # node where ||u|| is attained
    extremal_ok: bool
    message: str = ""

    def to_dict(self):
        return dict(self.__dict__)


def comparison_check(result: SolveResult, g, C_circ: float, params: EllipticityParams,
                     tol: float | None = None) -> ComparisonReport:
    """Maximum-principle bound ``||u||_{B} <= ||g||_ext + C C_circ``.

    For ``C_circ = 0`` the bound is checked exactly (up to ``tol``); for ``C_circ > 0`` the
    smallest admissible ``C`` is reported and no verdict is given.
    """
    u = result.u
    region = result.region
    g = _as_grid_function(g, u.spec)
    mask = region.mask(u.spec)
    tol = result.residual if tol is None else tol
    nodes = np.flatnonzero(mask)
    st = make_stencil(u.spec, nodes)
    mp = extremal_plus_grid(u, params, st)
    mm = extremal_minus_grid(u, params, st)
    slack = C_circ + max(tol, 1e-12) * 10
    extremal_ok = bool(np.all(mp >= -slack) and np.all(mm <= slack))
    vals = np.abs(np.asarray(u.values)[mask])
    lhs = float(vals.max())
    witness = float(u.spec.axis[nodes[int(np.argmax(vals))]])
    g_ext = np.abs(np.asarray(g.values)[~mask])
    g_sup = max(float(g_ext.max()) if g_ext.size else 0.0, g.tail.sup())
    if C_circ == 0:
        ok = lhs <= g_sup + tol
        msg = "" if ok else f"bound violated at x={witness:g}: {lhs:.6g} > {g_sup:.6g}"
        return ComparisonReport(bool(ok and extremal_ok), lhs, g_sup, 0.0, None, witness,
                                extremal_ok, msg if extremal_ok else "extremal inequalities fail")
    fitted = max(0.0, (lhs - g_sup) / C_circ)
    return ComparisonReport(None, lhs, g_sup, C_circ, fitted, witness, extremal_ok,
                            "informational: the constant is not constructive")
