from importlib import resources

import pytest

from eqmodel import models
from eqmodel.dsl import ParseError, ascii_name, load_model, parse_model, render_model
from eqmodel.structural import dae_index_lowering, liouville_transform
from eqmodel.symcore import simplify_basic
from eqmodel.sysmodel import flatten

DATA = resources.files("eqmodel") / "data"


def _same(a, b):
    fa, fb = flatten(a), flatten(b)
    assert [s.full_name for s in fa.states] == [s.full_name for s in fb.states]
    assert [s.full_name for s in fa.parameters] == [s.full_name for s in fb.parameters]
    assert [simplify_basic(e.residual) for e in fa.equations] == [simplify_basic(e.residual) for e in fb.equations]
    assert {k.full_name: v for k, v in fa.defaults.items()} == {k.full_name: v for k, v in fb.defaults.items()}


@pytest.mark.parametrize("fname,builder", [
    ("lorenz.eqm", models.lorenz),
    ("connected_lorenz.eqm", models.connected_lorenz),
    ("pendulum.eqm", models.pendulum),
    ("stiff3.eqm", models.stiff3),
])
def test_bundled_models_match_builders(fname, builder):
    _same(load_model(DATA / fname), builder())


@pytest.mark.parametrize("system", [
    models.lorenz(),
    models.connected_lorenz(),
    models.pendulum(),
    models.rc_circuits(3),
    dae_index_lowering(models.pendulum()),
    liouville_transform(models.lorenz()),
])
def test_render_parse_round_trip(system):
    text = render_model(system)
    back = parse_model(text)
    _same(system, back)
    assert render_model(back) == text


def test_greek_aliases():
    assert ascii_name("σ") == "sigma"
    s = parse_model("system g\nivar t\nparam σ\nstate x(t)\neq D(x) = -σ*x\n")
    assert [p.name for p in s.parameters] == ["sigma"]


def test_comments_in_render():
    text = render_model(models.lorenz(), comments={0: "hello"})
    assert "# hello" in text


@pytest.mark.parametrize("text,line", [
    ("system a\nivar t\nstate x(t)\neq D(x) = \n", 4),
    ("system a\nivar t\nstate x(t)\neq D(x) = q\n", 4),
    ("system a\nivar t\nstate x(t)\neq D(x) = (x\n", 4),
    ("system a\nivar t\nbogus\n", 3),
    ("system a\nivar t\nsubsystem b {\nstate x(t)\n", 3),  # points at the opening brace
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as exc:
        parse_model(text)
    assert exc.value.line == line


def test_rational_literal_exact():
    s = parse_model("system a\nivar t\nstate x(t)\neq D(x) = (8/3)*x\n")
    assert "(8/3)" in render_model(s)
