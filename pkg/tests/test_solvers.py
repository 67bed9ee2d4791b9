import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqmodel import models
from eqmodel.runtime import compile
from eqmodel.solvers import (
    DTMIN_UNDERFLOW,
    MAX_STEPS,
    NAN_DETECTED,
    SolverOptions,
    residual_form,
    solve_implicit_euler_mass_matrix,
    solve_rk4_fixed,
    solve_tsit5,
)
from eqmodel.structural import structural_simplify


def cubic(u, p, t):
    return np.array([3.0 * t * t])


def test_tsit5_exact_on_polynomial():
    # fifth-order method integrates t^3 without truncation error
    sol = solve_tsit5(cubic, [0.0], (0.0, 2.0), opts=SolverOptions(abstol=1e-10, reltol=1e-10))
    assert sol.success
    np.testing.assert_allclose(sol.us[:, 0], sol.ts**3, atol=1e-12)


def test_tsit5_tolerance_monotone():
    f = lambda u, p, t: -u  # noqa: E731
    errs = []
    for tol in (1e-4, 1e-6, 1e-8, 1e-10):
        sol = solve_tsit5(f, [1.0], (0.0, 5.0), opts=SolverOptions(abstol=tol, reltol=tol))
        errs.append(abs(sol.u[0] - math.exp(-5.0)))
    assert all(a > b for a, b in zip(errs, errs[1:]))


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_tsit5_preserves_linear_invariant(a, b):
    # u1 + u2 is conserved by this flow; Runge-Kutta keeps linear invariants
    f = lambda u, p, t: np.array([math.sin(u[1]) - u[0], u[0] - math.sin(u[1])])  # noqa: E731
    sol = solve_tsit5(f, [a, b], (0.0, 3.0))
    assert np.max(np.abs(sol.us.sum(axis=1) - (a + b))) <= 1e-12 * max(1.0, abs(a) + abs(b)) * 10


def test_saveat_hit_exactly():
    grid = np.linspace(0.0, 1.0, 11)
    sol = solve_tsit5(lambda u, p, t: -u, [1.0], (0.0, 1.0), opts=SolverOptions(saveat=grid))
    assert set(grid.tolist()) <= set(sol.ts.tolist())


def test_fixed_step_mode():
    sol = solve_tsit5(lambda u, p, t: -u, [1.0], (0.0, 1.0), opts=SolverOptions(adaptive=False, dt0=0.1))
    assert len(sol) == 11 and sol.stats.rejected == 0


def test_failure_statuses():
    blowup = lambda u, p, t: u * u  # noqa: E731
    sol = solve_tsit5(blowup, [1.0], (0.0, 2.0))
    assert sol.status in (DTMIN_UNDERFLOW, NAN_DETECTED)
    assert sol.t < 1.0 + 1e-6
    sol = solve_tsit5(lambda u, p, t: -u, [1.0], (0.0, 10.0), opts=SolverOptions(max_steps=3))
    assert sol.status == MAX_STEPS


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(abstol=0.0)
    with pytest.raises(ValueError):
        solve_tsit5(cubic, [0.0], (1.0, 0.0))


def test_rk4_exact_on_constant_slope():
    sol = solve_rk4_fixed(lambda u, p, t: np.ones(1), [0.0], (0.0, 1.0), h=0.1)
    np.testing.assert_allclose(sol.us[:, 0], sol.ts, atol=1e-14)
    assert sol.t == 1.0


def test_rk4_zero_span():
    sol = solve_rk4_fixed(cubic, [2.0], (1.0, 1.0), h=0.1)
    assert len(sol) == 1 and sol.u[0] == 2.0


def test_implicit_euler_single_step():
    sol = solve_implicit_euler_mass_matrix(lambda u, p, t: -u, [1.0], [1.0], (0.0, 0.1), h=0.1)
    assert sol.u[0] == pytest.approx(1.0 / 1.1, rel=1e-12)


def test_implicit_euler_index1():
    f, mass, states = residual_form(models.stiff3())
    names = [s.name for s in states]
    u0 = [1.0 if n == "f" else 0.5 if n == "s" else 2.0 for n in names]
    sol = solve_implicit_euler_mass_matrix(f, mass, u0, (0.0, 1.0), [10.0], h=1e-3)
    assert sol.success
    u = dict(zip(names, sol.u))
    assert u["y"] == pytest.approx(u["f"] + 2 * u["s"], abs=1e-9)


def test_lorenz_bounded():
    c = compile(structural_simplify(models.lorenz()))
    sol = solve_tsit5(c, c.default_state(), (0.0, 100.0), c.default_parameters())
    assert sol.success
    assert np.all(np.abs(sol.us) < 100.0)


def test_rk4_agrees_with_tsit5_on_lorenz():
    c = compile(structural_simplify(models.lorenz()))
    u0, p = c.default_state(), c.default_parameters()
    a = solve_rk4_fixed(c, u0, (0.0, 5.0), p, h=1e-4)
    b = solve_tsit5(c, u0, (0.0, 5.0), p, SolverOptions(abstol=1e-12, reltol=1e-12))
    np.testing.assert_allclose(a.u, b.u, atol=1e-4)
