import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqmodel.dsl import parse_expr
from eqmodel.symcore import (
    Const,
    Deriv,
    DifferentiationError,
    Equation,
    SymbolId,
    Sym,
    UnboundSymbolError,
    deriv,
    differentiate,
    evaluate,
    fn,
    free_symbols,
    independent,
    jacobian,
    parameters,
    render,
    simplify_basic,
    sin,
    substitute,
    trace,
    variables,
)

from .exprgen import exprs

t = independent("t")
x, y, z = variables("x y z", t)
sigma, rho, beta = parameters("sigma rho beta")
SYMS = [x, y, z]


def point(seed=0):
    rng = random.Random(seed)
    return {s.sym: rng.uniform(-1.5, 1.5) for s in SYMS}


class TestSimplify:
    def test_cancellation(self):
        assert simplify_basic(x - x) == Const(0)

    def test_zero_coefficient(self):
        assert simplify_basic(0 * sigma + x) == x

    def test_constant_folding(self):
        assert simplify_basic(2 * (3 * x)) == simplify_basic(6 * x)
        assert render(simplify_basic(Const(8) / Const(3))) == "(8/3)"

    def test_like_terms_and_factors(self):
        assert simplify_basic(x + x) == simplify_basic(2 * x)
        assert simplify_basic(x * x) == simplify_basic(x**2)

    def test_idempotent_on_lorenz(self):
        e = x * (rho - z) - y
        once = simplify_basic(e)
        assert simplify_basic(once) == once

    def test_commutative_canonical(self):
        assert simplify_basic(x * y + z) == simplify_basic(z + y * x)

    @settings(max_examples=60, deadline=None)
    @given(exprs(SYMS, 4), st.integers(0, 1000))
    def test_preserves_value(self, e, seed):
        env = point(seed)
        a, b = evaluate(e, env), evaluate(simplify_basic(e), env)
        assert math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(exprs(SYMS, 4))
    def test_idempotent(self, e):
        s = simplify_basic(e)
        assert simplify_basic(s) == s


class TestDifferentiate:
    def test_power_rule(self):
        assert differentiate(x**2, x) == simplify_basic(2 * x)

    def test_total_product_rule(self):
        d = differentiate(x * y, t)
        expected = simplify_basic(x * Deriv(y, t.sym, 1) + y * Deriv(x, t.sym, 1))
        assert d == expected

    def test_abs_raises(self):
        with pytest.raises(DifferentiationError):
            differentiate(fn("abs", x), x)

    def test_constant_is_zero(self):
        assert differentiate(Const(3.5), x) == Const(0)

    def test_wrt_derivative_atom(self):
        dx = Deriv(x, t.sym, 1)
        assert differentiate(3 * dx + x, dx) == Const(3)

    def test_lorenz_jacobian_trace(self):
        D = lambda e: deriv(e, t.sym)  # noqa: E731
        eqs = [Equation(sigma * (y - x)), Equation(x * (rho - z) - y), Equation(x * y - beta * z)]
        tr = trace(jacobian(eqs, [x, y, z]))
        assert tr == simplify_basic(-sigma - 1 - beta)
        assert D(x) == Deriv(x, t.sym, 1)

    def test_nested_derivative_merges(self):
        assert deriv(deriv(x, t.sym), t.sym) == Deriv(x, t.sym, 2)

    @settings(max_examples=40, deadline=None)
    @given(exprs(SYMS, 4), st.integers(0, 1000))
    def test_matches_finite_difference(self, e, seed):
        env = point(seed)
        for v in SYMS:
            d = evaluate(differentiate(e, v), env)
            h = 1e-6
            up, dn = dict(env), dict(env)
            up[v.sym] += h
            dn[v.sym] -= h
            fd = (evaluate(e, up) - evaluate(e, dn)) / (2 * h)
            assert abs(d - fd) <= 1e-5 * max(1.0, abs(d))


class TestEvaluateSubstitute:
    def test_evaluate(self):
        assert evaluate(x * y + sigma, {x.sym: 2.0, y.sym: 3.0, sigma.sym: 1.0}) == 7.0

    def test_unbound(self):
        with pytest.raises(UnboundSymbolError):
            evaluate(x, {})

    def test_simultaneous_substitution(self):
        assert substitute(x + y, {x: y, y: x}) == y + x

    def test_free_symbols(self):
        assert free_symbols(x + sigma * sin(y)) == {x.sym, y.sym, sigma.sym}

    def test_derivative_env(self):
        dx = Deriv(x, t.sym, 1)
        assert evaluate(2 * dx, {dx: 1.5}) == 3.0


class TestSymbols:
    def test_state_needs_ivar(self):
        with pytest.raises(ValueError):
            SymbolId("x", (), "state", None)

    def test_prefixed(self):
        assert x.sym.prefixed("a").full_name == "a.x"
        assert t.sym.prefixed("a") == t.sym

    def test_int_constants_exact(self):
        assert Const(3).value == Fraction(3)
        with pytest.raises(Exception):
            Const(float("nan"))


class TestRender:
    def test_negative_literal_vs_negation(self):
        assert render(Const(-2)) != render(-Const(2))

    @settings(max_examples=60, deadline=None)
    @given(exprs(SYMS, 4))
    def test_parse_render_round_trip(self, e):
        names = {s.sym.full_name: s.sym for s in SYMS}
        assert parse_expr(render(e), names, t.sym) == e
        s = simplify_basic(e)
        assert parse_expr(render(s), names, t.sym) == s
