import pytest

from eqmodel import models
from eqmodel.scheduler import SpyDocument, block_reads, build_schedule, render_spy, torn_incidence
from eqmodel.structural import build_incidence, structural_simplify


def test_rc50_single_level(rc50):
    sched = build_schedule(rc50)
    assert len(sched.levels) == 1
    assert sched.n_blocks == 50
    assert not sched.block_deps


def test_levels_respect_dependencies(pendulum_simplified):
    s = pendulum_simplified
    sched = build_schedule(s)
    for a, b in sched.block_deps:
        assert sched.level_of(a) < sched.level_of(b)
    assert sorted(b for lv in sched.levels for b in lv) == list(range(len(s.algebraic_blocks)))


def test_level_of_unknown():
    with pytest.raises(KeyError):
        build_schedule(structural_simplify(models.lorenz())).level_of(0)


def test_block_reads_exclude_outputs(rc50):
    blk = rc50.algebraic_blocks[0]
    assert not block_reads(blk) & set(blk.outputs())


def test_spy_text_and_pbm():
    doc = SpyDocument(2, 3, {(0, 0), (1, 2)})
    assert doc.to_text() == "#..\n..#\n"
    assert doc.to_pbm() == "P1\n3 2\n1 0 0\n0 0 1\n"


def test_spy_raw_pendulum():
    doc = render_spy(build_incidence(models.pendulum(), highest_order_only=False))
    assert doc.rows == 5
    assert len(doc.marks) == build_incidence(models.pendulum(), highest_order_only=False).n_marks()


def test_spy_blt_is_permutation(pendulum_simplified):
    s = pendulum_simplified
    g = s.blt.incidence
    assert len(render_spy(g, s.blt).marks) == g.n_marks()


def test_torn_incidence_square(rc50):
    g = torn_incidence(rc50)
    assert g.n_eqs == g.n_vars == sum(rc50.block_sizes())
