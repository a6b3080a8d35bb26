import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlreg.errors import (ConfigurationError, EmptyFamilyError, NumericError, ResolutionError,
                          StageError)
from nlreg.grid import Box, GridFunction, Modulus, make_grid, sup_distance
from nlreg.kernels import EllipticityParams, power_kernel
from nlreg.operators import (IsaacsSpec, extremal_minus_grid, extremal_plus_grid, infsup,
                             isaacs_entries, make_stencil)
from nlreg.problems import (ball_problem, concave_ti_problem, isaacs_3x3_family)
from nlreg.regularize import (EVAL_RADIUS, FiniteInfSup, PointNet, approximate_by_strong,
                              build_ihat, certify_pipeline, covering_radius, eval_F,
                              eval_F_counts, eval_F_smooth, family_modulus, finite_infsup_reduce,
                              fold_rhs, pipeline, regularize_step, select_grid_points,
                              smooth_operator, smooth_value_and_weights, smoothing_temperature)
from nlreg.mollify import mollify_function
from nlreg.solver import SolveConfig

B34 = Box.ball(EVAL_RADIUS, 1)


# ----------------------------------------------------------------------------- F and F^r

def test_eval_F_examples():
    assert eval_F([[1, 2], [3, 0]]) == 2.0
    assert eval_F(np.full((4, 4), -1.5)) == -1.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 8))
def test_eval_F_row_permutation_invariance(seed, N):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(N, N))
    p = rng.permutation(N)
    assert eval_F(x[p]) == eval_F(x)


def test_smooth_constant_matrix():
    val, M = smooth_value_and_weights(np.full((3, 3), 0.7), 0.05)
    assert val == pytest.approx(0.7 + 0.05 * math.log(3) - 0.05 * math.log(3), abs=1e-14)
    assert np.allclose(M, 1 / 9, atol=1e-15)


@pytest.mark.parametrize("tau", [1e-1, 1e-2, 1e-3])
def test_smooth_two_by_two_example(tau):
    x = [[1.0, 2.0], [3.0, 0.0]]
    val, M = smooth_value_and_weights(x, tau)
    assert abs(val - 2.0) <= 2 * tau * math.log(2)
    if tau <= 1e-2:
        assert M[0, 1] >= 1 - 1e-10


def test_smooth_rejects_non_finite():
    with pytest.raises(NumericError):
        smooth_value_and_weights([[np.inf, 1.0]], 0.1)


def test_temperature():
    assert smoothing_temperature(8, 0.1) == pytest.approx(0.1 / (2 * math.log(8)))
    assert smoothing_temperature(1, 0.1) == 0.1
    with pytest.raises(EmptyFamilyError):
        smoothing_temperature(0, 0.1)


def test_smoothing_gap_bound_and_tightness():
    rng = np.random.default_rng(7)
    tau = 0.01
    ratios = []
    for _ in range(1000):
        N = int(rng.integers(2, 13))
        # integer entries create ties, where the log-sum-exp error is largest
        x = rng.integers(0, 3, size=(N, N)).astype(float)
        val, M = smooth_value_and_weights(x, tau)
        gap = abs(val - eval_F(x))
        bound = 2 * tau * math.log(N)
        assert gap <= bound + 1e-12
        ratios.append(gap / bound)
        assert np.all(M >= 0) and abs(M.sum() - 1) <= 1e-10
    assert max(ratios) >= 0.25


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 12), st.floats(1e-3, 1.0))
def test_smooth_weights_form_a_simplex(seed, N, eps):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=10, size=(N, N))
    tau = smoothing_temperature(N, eps)
    val, M = eval_F_smooth(tau, x)
    assert np.all(M >= 0) and abs(M.sum() - 1) <= 1e-10
    assert abs(val - eval_F(x)) <= eps + 1e-12


def test_counts_representation_matches_explicit_matrix():
    rng = np.random.default_rng(3)
    I = isaacs_3x3_family()
    row_b = rng.integers(0, 3, size=4)
    col_a = rng.integers(0, 3, size=(4, 4))
    red = FiniteInfSup(I, row_b, col_a)
    vals = rng.normal(size=(9, 5))
    tau = 0.05
    val, W = smooth_operator(red, 0.1).eval_counts(vals)
    tau = smoothing_temperature(4, 0.1)
    for k in range(5):
        mat = vals[red.pair_ids, k]
        v, M = smooth_value_and_weights(mat, tau)
        assert val[k] == pytest.approx(v, abs=1e-12)
        agg = np.zeros(9)
        np.add.at(agg, red.pair_ids.ravel(), M.ravel())
        assert np.allclose(W[:, k], agg, atol=1e-12)
        assert eval_F_counts(red.counts(), vals)[k] == eval_F(mat)


# ----------------------------------------------------------------------------- covering and nets

def test_covering_radius_examples():
    assert covering_radius(0.2, Modulus.linear(1.0), 1.5) == pytest.approx(0.05, abs=1e-12)
    assert covering_radius(0.1, Modulus.power(0.5), 1.5) == pytest.approx(6.25e-4, rel=1e-9)
    assert covering_radius(0.1, Modulus.zero(), 1.5) == 1.5


def test_net_spacing_and_single_point():
    spec = make_grid(1, 1, 2, 1 / 64)
    net = select_grid_points(0.2, B34, Modulus.linear(1.0), spec)
    xs = spec.axis[net.nodes]
    assert net.zeta == pytest.approx(0.05)
    assert np.all(np.diff(xs) <= 2 * net.zeta + 1e-12)
    region_x = spec.axis[B34.mask(spec)]
    dist = np.min(np.abs(region_x[:, None] - xs[None, :]), axis=1)
    assert np.max(dist) <= net.zeta + 1e-12
    one = select_grid_points(10.0, B34, Modulus.linear(1.0), spec)
    assert one.nodes.size == 1 and spec.axis[one.nodes[0]] == 0.0


def test_net_below_resolution():
    spec = make_grid(1, 1, 2, 1 / 16)
    with pytest.raises(ResolutionError):
        select_grid_points(0.01, B34, Modulus.linear(1.0), spec)


# ----------------------------------------------------------------------------- hat family

def test_hat_is_identity_for_unit_power_kernel():
    spec = make_grid(1, 1, 2, 1 / 64)
    K = power_kernel(1, 0.5)
    I = IsaacsSpec.single(K, 0.0)
    v = GridFunction.sample(spec, lambda x: np.exp(-x ** 2))
    st_ = make_stencil(spec, np.flatnonzero(B34.mask(spec)))
    a = infsup(isaacs_entries(I, v, st_))[0]
    b = infsup(isaacs_entries(build_ihat(I, 0.25), v, st_))[0]
    assert np.max(np.abs(a - b)) <= 1e-10


@pytest.mark.parametrize("eps", [0.25, 0.125])
def test_mollified_zeroth_terms_within_modulus(eps):
    I = isaacs_3x3_family()
    J = build_ihat(I, eps)
    xs = np.linspace(-0.75, 0.75, 301)
    # every zeroth term is 0.5 sin((1+a)x + 2b) + const, Lipschitz with constant 1.5
    for b in range(3):
        for a in range(3):
            gap = np.max(np.abs(J.zeroth[b][a](xs) - I.zeroth[b][a](xs)))
            assert gap <= 1.5 * eps
    spec = make_grid(1, 1, 4, 1 / 64)
    st_ = make_stencil(spec, np.flatnonzero(B34.mask(spec)))
    z = GridFunction.zeros(spec)
    gap0 = np.max(np.abs(infsup(isaacs_entries(J, z, st_))[0] - infsup(isaacs_entries(I, z, st_))[0]))
    assert gap0 <= 1.5 * eps


def test_fold_rhs_shifts_zeroth_terms():
    spec = make_grid(1, 1, 2, 1 / 32)
    I = IsaacsSpec.single(power_kernel(1, 0.5), lambda x: np.sin(x))
    J = fold_rhs(I, 0.25)
    assert J.zeroth[0][0](0.3) == pytest.approx(np.sin(0.3) - 0.25)
    f = GridFunction.sample(spec, np.cos)
    Jg = fold_rhs(I, f)
    assert np.allclose(Jg.zeroth[0][0].values, np.sin(spec.axis) - np.cos(spec.axis))


# ----------------------------------------------------------------------------- strong approximation

def test_strong_approximation_of_zero_is_zero():
    spec = make_grid(1, 1, 2, 1 / 32)
    I = IsaacsSpec.single(power_kernel(1, 0.5), 0.0)
    res = approximate_by_strong(I, GridFunction.zeros(spec), 0.0, 0.25)
    assert np.max(np.abs(res.u.values)) == 0.0


def test_strong_approximation_exterior_and_convergence():
    P = ball_problem(s=0.75, h=1 / 128)
    u = GridFunction.sample(P.spec, P.exact)
    errs = []
    for eps in (0.25, 0.125, 0.0625):
        res = approximate_by_strong(P.family, u, P.f, eps)
        g = mollify_function(u, eps, 1 / eps)
        out = ~res.region.mask(P.spec)
        assert np.array_equal(res.u.values[out], g.values[out])
        errs.append(sup_distance(res.u, u, B34))
    assert errs[0] > errs[1] > errs[2]


# ----------------------------------------------------------------------------- reduction

def _reduce(I, u, eps):
    J = build_ihat(I, eps)
    mod = family_modulus(J, u, B34)
    net = select_grid_points(eps, B34, mod, u.spec)
    return J, finite_infsup_reduce(J, u, net, eps, B34)


def test_reduction_single_pair():
    spec = make_grid(1, 1, 2, 1 / 64)
    I = IsaacsSpec.single(power_kernel(1, 0.5), 0.3)
    u = GridFunction.sample(spec, np.cos)
    _, red = _reduce(I, u, 0.25)
    assert np.all(red.row_b == 0) and np.all(red.col_a == 0)
    assert red.translation_invariant and red.sup_only


def test_reduction_dominant_pair_has_zero_gap():
    spec = make_grid(1, 1, 2, 1 / 64)
    K = power_kernel(1, 0.5)
    I = IsaacsSpec([[K, K], [K, K]], [[0.0, 1.0], [2.0, 3.0]])
    u = GridFunction.sample(spec, np.cos)
    J, red = _reduce(I, u, 0.25)
    st_ = make_stencil(spec, np.flatnonzero(B34.mask(spec)))
    assert np.all(red.provenance()[0][0] == (1, 0))
    hat = infsup(isaacs_entries(J, u, st_))[0]
    assert np.max(np.abs(red.eval_grid(u, st_) - hat)) == 0.0


def test_reduction_generic_family():
    spec = make_grid(1, 1, 4, 1 / 128)
    u = GridFunction.sample(spec, lambda x: 0.5 * np.cos(x))
    eps = 0.1
    J, red = _reduce(isaacs_3x3_family(), u, eps)
    assert red.N == 2 * red.net.nodes.size
    st_ = make_stencil(spec, np.flatnonzero(B34.mask(spec)))
    for v in (u, GridFunction.zeros(spec)):
        hat = infsup(isaacs_entries(J, v, st_))[0]
        assert np.max(np.abs(red.eval_grid(v, st_) - hat)) <= eps
        sm = smooth_operator(red, eps).eval_grid(v, st_)
        assert np.max(np.abs(sm - red.eval_grid(v, st_))) <= eps
        assert np.max(np.abs(sm - hat)) <= 2 * eps


def test_smoothing_identical_entries_is_exact():
    spec = make_grid(1, 1, 2, 1 / 64)
    I = IsaacsSpec.single(power_kernel(1, 0.5), 0.0)
    red = FiniteInfSup(I, np.zeros(3, int), np.zeros((3, 3), int))
    v = GridFunction.sample(spec, np.cos)
    st_ = make_stencil(spec, np.flatnonzero(B34.mask(spec)))
    assert np.allclose(smooth_operator(red, 0.1).eval_grid(v, st_), red.eval_grid(v, st_),
                       atol=1e-13, rtol=0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_smoothed_operator_is_elliptic(seed):
    spec = make_grid(1, 1, 2, 1 / 32)
    rng = np.random.default_rng(seed)
    I = isaacs_3x3_family()
    red = FiniteInfSup(I, rng.integers(0, 3, 4), rng.integers(0, 3, (4, 4)))
    op = smooth_operator(red, 0.1)
    st_ = make_stencil(spec, np.flatnonzero(B34.mask(spec)))
    u = GridFunction.sample(spec, lambda x: np.cos(rng.uniform(1, 3) * x))
    v = GridFunction(spec, rng.normal(size=spec.size) * 0.1)
    d = op.eval_grid(u + v, st_) - op.eval_grid(u, st_)
    p = EllipticityParams(1, 0.5, 0.5, 2.0)
    assert np.all(extremal_minus_grid(v, p, st_) <= d + 1e-9)
    assert np.all(d <= extremal_plus_grid(v, p, st_) + 1e-9)


# ----------------------------------------------------------------------------- pipeline

def test_pipeline_on_zero_problem():
    spec = make_grid(1, 1, 2, 1 / 32)
    I = IsaacsSpec.single(power_kernel(1, 0.5), 0.0)
    steps = pipeline(I, GridFunction.zeros(spec), 0.0, [0.25, 0.125])
    for s_ in steps:
        assert np.max(np.abs(s_.u_eps.values)) == 0.0
        assert s_.diagnostics["operator_residual"] == 0.0
        assert s_.diagnostics["sup_error"] == 0.0


def test_pipeline_ball_certifies():
    P = ball_problem(s=0.75, h=1 / 128)
    u = GridFunction.sample(P.spec, P.exact)
    steps = pipeline(P.family, u, P.f, [0.25, 0.125, 0.0625])
    assert len(steps) == 3
    cert = certify_pipeline(steps, Modulus.zero(), SolveConfig().tol)
    assert cert.passed and cert.sup_error_strictly_decreasing
    for s_ in steps:
        d = s_.diagnostics
        assert d["weight_sum_error"] <= 1e-10 and d["weight_min"] >= 0
        assert d["reduction_gap_u"] <= s_.epsilon and d["smoothing_gap"] <= s_.epsilon


def test_pipeline_degenerate_large_eps():
    spec = make_grid(1, 1, 4, 1 / 32)
    I = isaacs_3x3_family()
    u = GridFunction.sample(spec, lambda x: 0.1 * np.cos(x))
    step = regularize_step(I, u, 0.0, 4.0)
    assert step.op.base.net.nodes.size >= 1
    assert np.isfinite(step.diagnostics["operator_residual"])


def test_pipeline_is_deterministic():
    P = ball_problem(s=0.75, h=1 / 64)
    u = GridFunction.sample(P.spec, P.exact)
    a = regularize_step(P.family, u, P.f, 0.25).diagnostics
    b = regularize_step(P.family, u, P.f, 0.25).diagnostics
    assert a == b


def test_concave_translation_invariant_structure():
    P = concave_ti_problem(h=1 / 256)
    u = GridFunction.zeros(P.spec)
    for s_ in pipeline(P.family, u, P.f, [0.25, 0.125]):
        assert s_.op.translation_invariant and s_.op.sup_only
        assert np.all(s_.op.base.row_b == 0)


def test_stage_errors_carry_the_stage():
    spec = make_grid(1, 1, 2, 1 / 8)
    I = isaacs_3x3_family()
    u = GridFunction.sample(spec, np.cos)
    with pytest.raises(StageError) as exc:
        regularize_step(I, u, 0.0, 0.01)
    assert exc.value.stage in {"select-points", "strong-solve", "reduce"}
    with pytest.raises(ConfigurationError):
        pipeline(I, u, 0.0, [])
