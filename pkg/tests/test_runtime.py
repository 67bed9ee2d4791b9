import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqmodel import models
from eqmodel.runtime import (
    NewtonConfig,
    PreconditionError,
    compile,
    compile_expr,
    eval_rhs,
    reconstruct_observed,
)
from eqmodel.structural import structural_simplify
from eqmodel.symcore import Equation, evaluate, independent, variables
from eqmodel.sysmodel import make_system

from .exprgen import exprs

t = independent("t")
x, y, z = variables("x y z", t)
SYMS = [x, y, z]


@settings(max_examples=60, deadline=None)
@given(exprs(SYMS, 4), st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3))
def test_compile_expr_matches_evaluate(e, vals):
    slot = {s: i for i, s in enumerate(SYMS)}
    f = compile_expr(e, slot)
    want = evaluate(e, {s.sym: v for s, v in zip(SYMS, vals)})
    assert math.isclose(f(list(vals)), want, rel_tol=1e-12, abs_tol=1e-12)


def test_lorenz_rhs():
    c = compile(structural_simplify(models.lorenz()))
    du = c(c.default_state(), c.default_parameters(), 0.0)
    np.testing.assert_allclose(du, [-10.0, 28.0, 0.0])


def test_pendulum_rhs(pendulum_simplified):
    c = compile(pendulum_simplified)
    assert [q.name for q in c.states] == ["x", "vx", "y", "vy"]
    du = c(c.default_state(), c.default_parameters(), 0.0)
    np.testing.assert_allclose(du, [0.0, 0.0, 0.0, -9.8], atol=1e-12)


def test_overrides_and_shape_checks():
    c = compile(structural_simplify(models.lorenz()))
    p = c.default_parameters({"rho": 10.0})
    assert p[[q.name for q in c.parameters].index("rho")] == 10.0
    with pytest.raises(ValueError):
        c(np.zeros(2), p, 0.0)
    with pytest.raises(ValueError):
        c(c.default_state(), p[:1], 0.0)


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(tol=0)
    with pytest.raises(ValueError):
        NewtonConfig(initial_guess="cold")


def test_precondition_zero_gamma():
    s = structural_simplify(models.connected_lorenz(gamma=0.0))
    c = compile(s)
    with pytest.raises(PreconditionError):
        c(c.default_state(), c.default_parameters(), 0.0)


def test_connected_lorenz_observed():
    s = structural_simplify(models.connected_lorenz())
    c = compile(s)
    u, p = c.default_state(), c.default_parameters()
    obs = {k.full_name: v for k, v in reconstruct_observed(s, u, p, 0.0, c).items()}
    vals = dict(zip((q.full_name for q in c.states), u))
    assert vals["lorenz1.x"] + vals["lorenz2.y"] + obs["a"] * 2.0 == pytest.approx(0.0, abs=1e-12)


def test_parallel_bitwise_equal(rc50):
    c = compile(rc50)
    p = c.default_parameters()
    rng = np.random.default_rng(3)
    for _ in range(10):
        u = rng.uniform(-1, 1, c.n_states)
        a = eval_rhs(c, u, p, 0.0, parallel=False)
        b = eval_rhs(c, u, p, 0.0, parallel=True)
        assert a.tobytes() == b.tobytes()
    c.close()


def test_block_residuals_within_tol(rc50):
    c = compile(rc50)
    u = c.default_state()
    norms = c.block_residual_norms(u + 0.3, c.default_parameters(), 0.0)
    assert max(norms) <= c.newton.tol


def test_pendulum_original_equations(pendulum_simplified):
    s = pendulum_simplified
    c = compile(s)
    p = c.default_parameters()
    names = [q.name for q in c.states]
    u = c.default_state()
    # consistent point: on the circle, tangential velocity
    th = 0.3
    vals = {"x": math.sin(th), "y": -math.cos(th), "vx": 0.5 * math.cos(th), "vy": 0.5 * math.sin(th)}
    for i, n in enumerate(names):
        if n in vals:
            u[i] = vals[n]
    obs = {k.name: v for k, v in reconstruct_observed(s, u, p, 0.0, c).items()}
    du = dict(zip(names, c(u, p, 0.0)))
    T = obs["T"]
    assert du["vx"] == pytest.approx(T * vals["x"], abs=1e-9)
    assert du["vy"] == pytest.approx(T * vals["y"] - 9.8, abs=1e-9)
    # second derivative of the constraint: T L^2 = g y - |v|^2
    assert T == pytest.approx(9.8 * vals["y"] - 0.25, abs=1e-9)


def test_warm_start_reduces_iterations(rc50):
    cold = compile(rc50, newton=NewtonConfig(initial_guess="zero"))
    warm = compile(rc50)
    u, p = cold.default_state(), cold.default_parameters()
    ctx_c, ctx_w = cold.new_context(), warm.new_context()
    for k in range(5):
        cold.eval_rhs(u + 1e-3 * k, p, 0.0, ctx=ctx_c)
        warm.eval_rhs(u + 1e-3 * k, p, 0.0, ctx=ctx_w)
    assert ctx_w.newton_iterations < ctx_c.newton_iterations


def test_purely_algebraic_system():
    (w,) = variables("w", t)
    s = structural_simplify(make_system("alg", t, [Equation(0, w**3 + w - 2)], [w]))
    c = compile(s)
    assert c.n_states == 0
    assert c([], [], 0.0).shape == (0,)
    assert reconstruct_observed(s, [], [], 0.0, c)[w.sym] == pytest.approx(1.0, abs=1e-10)
