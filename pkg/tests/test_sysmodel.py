import pytest

from eqmodel import models
from eqmodel.symcore import Differential, Equation, Sym, independent, parameters, variables
from eqmodel.sysmodel import FlatSystem, ModelError, flatten, make_system, validate

t = independent("t")
D = Differential(t)


def test_inference_order():
    x, y = variables("x y", t)
    (k,) = parameters("k")
    s = make_system("s", t, [Equation(D(y), -k * y), Equation(D(x), y)])
    assert [v.name for v in s.states] == ["y", "x"]
    assert [p.name for p in s.parameters] == ["k"]


def test_parameter_under_derivative_rejected():
    (k,) = parameters("k")
    with pytest.raises(ModelError):
        make_system("s", t, [Equation(D(k), 1)])


def test_duplicate_subsystem_names():
    with pytest.raises(ModelError):
        make_system("p", t, [], subsystems=[models.lorenz("a"), models.lorenz("a")])


def test_dotted_access():
    c = models.connected_lorenz()
    assert c.lorenz1.x.sym.full_name == "lorenz1.x"
    assert c.gamma.sym.name == "gamma"
    with pytest.raises(AttributeError):
        c.lorenz3


def test_flatten_connected_lorenz():
    flat = flatten(models.connected_lorenz())
    assert isinstance(flat, FlatSystem)
    assert len(flat.equations) == 7
    assert len(flat.states) == 7
    assert flat.symbol("lorenz2.sigma").namespace == ("lorenz2",)
    assert flat.defaults[flat.symbol("lorenz2.y")] == 1.0


def test_flatten_idempotent():
    flat = flatten(models.connected_lorenz())
    assert flatten(flat) is flat


def test_parent_default_overrides_component():
    l1 = models.lorenz("l")
    x = Sym(l1.states[0].prefixed("l"))
    parent = make_system("p", t, [], [], [], subsystems=[l1], defaults={x: 5.0})
    assert flatten(parent).defaults[x.sym] == 5.0


def test_mass_matrix():
    assert models.pendulum().mass_matrix == [1, 1, 1, 1, 0]


def test_validate():
    rep = validate(models.pendulum())
    assert rep.ok and rep.is_square and rep.deficit == 0
    x, y = variables("x y", t)
    under = make_system("u", t, [Equation(D(x), y)], [x, y])
    rep = validate(under)
    assert rep.deficit == 1 and not rep.ok
    assert any("under-determined" in m for m in rep.messages())


def test_explicit_lists_must_cover_equations():
    x, y = variables("x y", t)
    (k,) = parameters("k")
    with pytest.raises(ModelError):
        make_system("s", t, [Equation(D(x), -k * x)], [x], [])
    with pytest.raises(ModelError):
        make_system("s", t, [Equation(D(x), y)], [x])
