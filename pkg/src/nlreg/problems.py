"""Canonical problems used by the CLI, the examples and the test-suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from .errors import ConfigurationError
from .grid import Box, GridFunction, GridSpec, make_grid
from .kernels import modulated_power_kernel, power_kernel
from .operators import IsaacsSpec, frac_laplacian_constant


@dataclass(frozen=True, eq=False)
class Problem:
    """``I(u) = f`` in ``region``, ``u = g`` outside."""

    name: str
    spec: GridSpec
    family: IsaacsSpec
    f: object
    g: GridFunction
    region: Box
    exact: object = None


def ball_solution_constant(n: int, s: float) -> float:
    """``u = gamma (1 - |x|^2)_+^s`` solves ``(-Delta)^s u = 1`` in the unit ball."""
    return gamma(n / 2) / (4 ** s * gamma(1 + s) * gamma(n / 2 + s))


def ball_solution(x, s: float, n: int = 1):
    x = np.asarray(x, float)
    r2 = x ** 2 if n == 1 else np.sum(x ** 2, axis=-1)
    return ball_solution_constant(n, s) * np.maximum(1.0 - r2, 0.0) ** s


def ball_problem(s: float = 0.75, h: float = 1 / 256, R_ext: float = 4.0,
                 lam: float = 0.5, Lam: float = 2.0) -> Problem:
    """``(-Delta)^s u = 1`` on ``(-1, 1)``, ``u = 0`` outside, written as
    ``-L u = -1 / c_{1,s}`` with the unit power kernel."""
    spec = make_grid(1, 1.0, R_ext, h)
    K = power_kernel(1, s, 1.0, lam, Lam)
    f = -1.0 / frac_laplacian_constant(1, s)
    return Problem("ball", spec, IsaacsSpec.single(K, 0.0), f, GridFunction.zeros(spec),
                   Box.ball(1.0, 1, open=True), lambda x: ball_solution(x, s))


def constant_problem(value: float = 1.0, s: float = 0.5, h: float = 1 / 64,
                     R_ext: float = 2.0) -> Problem:
    """Exterior data ``g = value`` everywhere; the solution is the constant."""
    spec = make_grid(1, 1.0, R_ext, h)
    I = IsaacsSpec.single(power_kernel(1, s, 1.0, 0.5, 2.0), 0.0)
    return Problem("constant", spec, I, 0.0, GridFunction.constant(spec, value),
                   Box.ball(1.0, 1, open=True), lambda x: np.full(np.shape(x), value))


def isaacs_3x3_family(s: float = 0.5) -> IsaacsSpec:
    """A generic 3 x 3 family: x-modulated power kernels and oscillating zeroth terms
    whose inf-sup optimizer changes across the unit ball."""
    ks = [[modulated_power_kernel(1, s, 1.0 + 0.2 * b + 0.1 * a, 0.2 * ((a + b) % 3 - 1),
                                  1.0 + a, 0.5, 2.0) for a in range(3)] for b in range(3)]
    cs = [[_wave(0.5, 1.0 + a, 2.0 * b, 0.1 * (a - b)) for a in range(3)] for b in range(3)]
    return IsaacsSpec(ks, cs)


def _wave(amp, freq, phase, shift):
    def c(x):
        return amp * np.sin(freq * np.asarray(x, float) + phase) + shift
    return c


def isaacs_3x3_problem(s: float = 0.5, h: float = 1 / 256, R_ext: float = 4.0) -> Problem:
    spec = make_grid(1, 1.0, R_ext, h)
    g = GridFunction.sample(spec, lambda x: np.where(np.abs(x) < 3.0, 0.5 * np.cos(x), 0.0))
    return Problem("isaacs-3x3", spec, isaacs_3x3_family(s), 0.0, g, Box.ball(1.0, 1, open=True))


def concave_ti_family(s: float = 0.75, scales=(0.75, 1.0, 1.5), shifts=(0.0, -0.1, -0.3)) -> IsaacsSpec:
    """Sup-only family of scaled power kernels with constant zeroth terms."""
    ks = [[power_kernel(1, s, c, 0.5, 2.0) for c in scales]]
    return IsaacsSpec(ks, [list(shifts)])


def concave_ti_problem(s: float = 0.75, h: float = 1 / 256, R_ext: float = 4.0) -> Problem:
    spec = make_grid(1, 1.0, R_ext, h)
    return Problem("concave-ti", spec, concave_ti_family(s), -1.0, GridFunction.zeros(spec),
                   Box.ball(1.0, 1, open=True))


PROBLEMS = {
    "ball": ball_problem,
    "constant": constant_problem,
    "isaacs-3x3": isaacs_3x3_problem,
    "concave-ti": concave_ti_problem,
}


def make_problem(name: str, **kw) -> Problem:
    try:
        return PROBLEMS[name](**kw)
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
