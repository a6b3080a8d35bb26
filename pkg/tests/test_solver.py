import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlreg.errors import ConfigurationError, NonconvergenceError, SchemeError, StencilError
from nlreg.grid import Box, GridFunction, make_grid
from nlreg.kernels import EllipticityParams, modulated_power_kernel, power_kernel, with_params
from nlreg.operators import IsaacsSpec
from nlreg.problems import ball_problem, constant_problem
from nlreg.solver import SolveConfig, assemble, comparison_check, residual_supnorm, solve_dirichlet
from tests.oracles import ball_exact

UNIT = Box.ball(1.0, 1, open=True)


def _family_2x2(s=0.5, cs=((0.3, -0.2), (0.1, 0.4))):
    ks = [[with_params(power_kernel(1, s, 1.0 + 0.5 * a + 0.25 * b), 0.5, 3.0) for a in range(2)]
          for b in range(2)]
    return IsaacsSpec(ks, [list(r) for r in cs])


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolveConfig(method="newton")
    with pytest.raises(ConfigurationError):
        SolveConfig(tol=0.0)
    with pytest.raises(ConfigurationError):
        SolveConfig(pseudo_time_step=-1.0)


@pytest.mark.parametrize("method", ["policy-iteration", "pseudo-time"])
def test_constant_data_is_reproduced(method):
    P = constant_problem(7.0)
    res = solve_dirichlet(P.family, 0.0, P.g, P.region, SolveConfig(method=method, tol=1e-10))
    assert np.max(np.abs(res.u.values - 7.0)) <= 1e-10
    assert res.residual <= 1e-10


def test_exterior_values_are_kept():
    spec = make_grid(1, 1, 2, 1 / 32)
    g = GridFunction.sample(spec, lambda x: np.sin(3 * x))
    res = solve_dirichlet(_family_2x2(), 0.0, g, UNIT)
    out = ~UNIT.mask(spec)
    assert np.array_equal(res.u.values[out], g.values[out])
    assert res.residual <= SolveConfig().tol


def test_ball_problem_against_closed_form():
    s = 0.75
    P = ball_problem(s=s, h=1 / 256)
    res = solve_dirichlet(P.family, P.f, P.g, P.region)
    err = np.max(np.abs(res.u.values - ball_exact(P.spec.axis, s)))
    assert err <= 5e-3


def test_isaacs_sandwiched_by_pure_policies():
    spec = make_grid(1, 1, 2, 1 / 32)
    I = _family_2x2()
    g = GridFunction.zeros(spec)
    u = solve_dirichlet(I, 0.0, g, UNIT).u.values
    pure = {}
    for b in range(2):
        for a in range(2):
            J = IsaacsSpec.single(I.kernels[b][a], I.zeroth[b][a])
            pure[b, a] = solve_dirichlet(J, 0.0, g, UNIT).u.values
    # min over b of max over a in the operator: u lies between the extreme pure solutions
    lo = np.minimum.reduce(list(pure.values()))
    hi = np.maximum.reduce(list(pure.values()))
    assert np.all(lo - 1e-9 <= u) and np.all(u <= hi + 1e-9)
    # fixing b gives a sup-only operator G_b >= I, which is decreasing in u, so u <= u_b
    for b in range(2):
        Jb = IsaacsSpec([I.kernels[b]], [I.zeroth[b]])
        ub = solve_dirichlet(Jb, 0.0, g, UNIT).u.values
        assert np.all(u <= ub + 1e-9)


def test_methods_agree():
    spec = make_grid(1, 1, 2, 1 / 32)
    g = GridFunction.sample(spec, lambda x: np.cos(2 * x))
    I = _family_2x2()
    tol = 1e-9
    a = solve_dirichlet(I, 0.2, g, UNIT, SolveConfig(method="policy-iteration", tol=tol))
    b = solve_dirichlet(I, 0.2, g, UNIT, SolveConfig(method="pseudo-time", tol=tol))
    # residual tol translates into a solution gap bounded by tol times the inverse of the smallest zeroth-free decay
    assert np.max(np.abs(a.u.values - b.u.values)) <= 2 * tol * 10
    assert a.method == "policy-iteration" and b.method == "pseudo-time"


def test_residual_supnorm_trivial_cases():
    spec = make_grid(1, 1, 2, 1 / 32)
    I = IsaacsSpec.single(power_kernel(1, 0.5), 0.0)
    assert residual_supnorm(I, GridFunction.zeros(spec), 0.0, UNIT) == 0.0
    res = solve_dirichlet(_family_2x2(), 0.1, GridFunction.zeros(spec), UNIT)
    assert residual_supnorm(_family_2x2(), res.u, 0.1, UNIT) <= SolveConfig().tol * 1.01


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_single_node_perturbation_bound(s):
    h = 1 / 32
    spec = make_grid(1, 1, 2, h)
    Lam = 2.0
    I = IsaacsSpec.single(power_kernel(1, s, Lam, 0.5, Lam), 0.0)
    res = solve_dirichlet(I, 0.0, GridFunction.zeros(spec), UNIT)
    delta = 1e-3
    vals = res.u.values.copy()
    vals[spec.index_of(0.25)] += delta
    r = residual_supnorm(I, GridFunction(spec, vals), 0.0, UNIT)
    # per-node weight bound of the discretization: sum of weights <= (1/s + 1/(1-s)) h^{-2s}
    kappa = 2.0 * (1.0 / s + 1.0 / (1.0 - s))
    assert r - res.residual <= Lam * kappa * delta / h ** (2 * s)
    assert r - res.residual > 0.1 * Lam * delta / h ** (2 * s)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_comparison_ordering(seed):
    spec = make_grid(1, 1, 2, 1 / 16)
    rng = np.random.default_rng(seed)
    I = _family_2x2()
    g1 = rng.normal(size=spec.size)
    g2 = g1 + np.abs(rng.normal(size=spec.size))
    f1 = rng.uniform(-1, 1)
    f2 = f1 - abs(rng.normal())
    # I(u) = -L u + c - ... : decreasing f raises u, so (f2 <= f1, g2 >= g1) gives u2 >= u1
    u1 = solve_dirichlet(I, f1, GridFunction(spec, g1), UNIT).u.values
    u2 = solve_dirichlet(I, f2, GridFunction(spec, g2), UNIT).u.values
    assert np.all(u2 >= u1 - 1e-8)


def test_grid_refinement_slope():
    s = 0.75
    hs = [1 / 32, 1 / 64, 1 / 128]
    sols = [solve_dirichlet(*(lambda P: (P.family, P.f, P.g, P.region))(ball_problem(s=s, h=h)))
            for h in hs]
    # successive differences on the common coarse nodes
    diffs = []
    for fine, coarse in zip(sols[1:], sols[:-1]):
        xc = coarse.u.spec.axis
        vf = np.interp(xc, fine.u.spec.axis, fine.u.values)
        diffs.append(np.max(np.abs(vf - coarse.u.values)))
    slope = np.log(diffs[0] / diffs[1]) / np.log(2)
    assert abs(slope - min(1.0, 2 * s)) <= 0.3


def test_nonconvergence_carries_history():
    P = ball_problem(s=0.5, h=1 / 32)
    with pytest.raises(NonconvergenceError) as exc:
        solve_dirichlet(P.family, P.f, P.g, P.region, SolveConfig(method="pseudo-time", max_time_steps=5))
    assert len(exc.value.residual_history) >= 1


def test_unstable_step_is_rejected():
    P = ball_problem(s=0.5, h=1 / 32)
    with pytest.raises(SchemeError):
        solve_dirichlet(P.family, P.f, P.g, P.region, SolveConfig(method="pseudo-time", pseudo_time_step=10.0))


def test_region_must_fit_the_interior_box():
    spec = make_grid(1, 1, 2, 1 / 16)
    with pytest.raises(StencilError):
        solve_dirichlet(_family_2x2(), 0.0, GridFunction.zeros(spec), Box.ball(1.5, 1))
    with pytest.raises(ConfigurationError):
        solve_dirichlet(_family_2x2(), 0.0, GridFunction.zeros(spec), Box((0.01,), (0.02,)))


def test_comparison_check_cases():
    P = constant_problem(1.0)
    res = solve_dirichlet(P.family, 0.0, P.g, P.region)
    params = P.family.params
    rep = comparison_check(res, P.g, 0.0, params)
    assert rep.passed and rep.lhs <= 1.0 + 1e-12
    info = comparison_check(res, P.g, 0.5, params)
    assert info.passed is None and info.fitted_C == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_maximum_principle_oscillating_data(seed):
    spec = make_grid(1, 1, 2, 1 / 32)
    rng = np.random.default_rng(seed)
    k, ph, amp = rng.uniform(1, 10), rng.uniform(0, 2 * np.pi), rng.uniform(0.1, 3)
    g = GridFunction.sample(spec, lambda x: amp * np.sin(k * x + ph))
    K = with_params(modulated_power_kernel(1, 0.5, 2.0, 0.5, 1.0), 0.5, 3.0)
    I = IsaacsSpec([[K, power_kernel(1, 0.5, 1.0, 0.5, 3.0)]], [[0.0, 0.0]])
    res = solve_dirichlet(I, 0.0, g, UNIT)
    rep = comparison_check(res, g, 0.0, EllipticityParams(1, 0.5, 0.5, 3.0))
    assert rep.passed, rep.message


def test_assembled_matrix_is_monotone():
    spec = make_grid(1, 1, 2, 1 / 32)
    asm = assemble(_family_2x2(), 0.0, GridFunction.zeros(spec), UNIT)
    idx = np.arange(asm.nodes.size)
    off = asm.A.copy()
    off[..., idx, idx] = 0.0
    assert np.all(off <= 0) and np.all(asm.A[..., idx, idx] > 0)
    # weakly diagonally dominant rows
    assert np.all(asm.A.sum(axis=-1) >= -1e-9)
