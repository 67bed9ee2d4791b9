import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqmodel import models
from eqmodel.structural import (
    IncidenceStructure,
    InconsistentSystemError,
    SingularSystemError,
    alias_elimination,
    blt_sort,
    build_incidence,
    liouville_transform,
    maximal_matching,
    pantelides,
    structural_simplify,
)
from eqmodel.symcore import Differential, Equation, independent, parameters, variables
from eqmodel.sysmodel import flatten, make_system

t = independent("t")
D = Differential(t)


def _graph(n_eqs, n_vars, rows):
    return IncidenceStructure(n_eqs, n_vars, tuple(frozenset(r) for r in rows),
                              tuple((None, 0) for _ in range(n_vars)), tuple((i, 0) for i in range(n_eqs)))


@st.composite
def bipartite(draw, max_n=7):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(1, max_n))
    rows = [draw(st.sets(st.integers(0, m - 1), max_size=m)) for _ in range(n)]
    return n, m, rows


def _max_matching_size(n, rows):
    memo = {}

    def go(i, used):
        if i == n:
            return 0
        key = (i, used)
        if key not in memo:
            best = go(i + 1, used)
            for j in rows[i]:
                if not used >> j & 1:
                    best = max(best, 1 + go(i + 1, used | 1 << j))
            memo[key] = best
        return memo[key]

    return go(0, 0)


class TestMatching:
    @settings(max_examples=80, deadline=None)
    @given(bipartite())
    def test_maximum_and_consistent(self, g):
        n, m, rows = g
        mt = maximal_matching(_graph(n, m, rows))
        assert mt.cardinality == _max_matching_size(n, rows)
        for i, j in enumerate(mt.eq_to_var):
            if j is not None:
                assert j in rows[i] and mt.var_to_eq[j] == i

    def test_perfect_on_lorenz(self):
        g = build_incidence(models.lorenz())
        assert maximal_matching(g).is_perfect()


class TestBlt:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**31))
    def test_lower_triangular(self, n, seed):
        rng = random.Random(seed)
        rows = [{i} | {j for j in range(n) if rng.random() < 0.25} for i in range(n)]
        g = _graph(n, n, rows)
        blt = blt_sort(g, maximal_matching(g))
        pos = {}
        for b, blk in enumerate(blt.blocks):
            for v in blk.vars:
                pos[v] = b
        assert sorted(blt.equation_order()) == list(range(n))
        for b, blk in enumerate(blt.blocks):
            for i in blk.eqs:
                assert all(pos[j] <= b for j in rows[i])

    def test_cycle_is_one_block(self):
        g = _graph(3, 3, [{0, 1}, {1, 2}, {2, 0}])
        blt = blt_sort(g, maximal_matching(g))
        assert [b.size for b in blt.blocks] == [3]


class TestPantelides:
    def test_pendulum_counts(self):
        red, counts = pantelides(models.pendulum())
        assert counts == [0, 0, 0, 0, 2]
        assert len(red.equations) == len(red.states)

    def test_ode_untouched(self):
        red, counts = pantelides(models.lorenz())
        assert counts == [0, 0, 0]

    def test_non_square(self):
        x, y = variables("x y", t)
        with pytest.raises(SingularSystemError):
            pantelides(make_system("u", t, [Equation(D(x), y)], [x, y]))

    def test_structurally_singular(self):
        x, y = variables("x y", t)
        s = make_system("s", t, [Equation(0, x), Equation(0, 2 * x)], [x, y])
        with pytest.raises(SingularSystemError):
            pantelides(s, max_diff=3)


class TestAliasAndSimplify:
    def test_alias_removed(self):
        x, y, w = variables("x y w", t)
        s = make_system("a", t, [Equation(D(x), -w), Equation(0, w - y), Equation(D(y), x)], [x, y, w])
        red, observed = alias_elimination(s)
        assert len(red.equations) == 2
        assert observed[w.sym] == y

    def test_inconsistent(self):
        x, w = variables("x w", t)
        s = make_system("a", t, [Equation(D(x), w), Equation(0, w - w + 1)], [x, w])
        with pytest.raises(InconsistentSystemError):
            alias_elimination(s)

    def test_connected_lorenz_summary(self):
        s = structural_simplify(models.connected_lorenz())
        assert len(s.differential_states) == 6
        assert "a" in s.observables()

    def test_pendulum_blocks(self, pendulum_simplified):
        s = pendulum_simplified
        assert len(s.differential_states) == 4
        outs = {str(v) for b in s.algebraic_blocks for v in b.outputs()} | {str(v) for v, _ in s.solved_assignments}
        assert "T" in outs


class TestLiouville:
    def test_adds_state(self):
        out = liouville_transform(models.lorenz(), name="trJ")
        flat = flatten(models.lorenz())
        assert len(out.states) == len(flat.states) + 1
        assert out.states[-1].name == "trJ"

    def test_rejects_dae(self):
        with pytest.raises(Exception):
            liouville_transform(models.pendulum())
