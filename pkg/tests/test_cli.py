import os
from importlib import resources

import pytest

from eqmodel import cli

DATA = resources.files("eqmodel") / "data"
LORENZ = str(DATA / "lorenz.eqm")
PENDULUM = str(DATA / "pendulum.eqm")


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_usage_errors(capsys):
    assert run() == cli.EXIT_USAGE
    assert run("solve") == cli.EXIT_USAGE
    assert run("solve", "/nonexistent.eqm") == cli.EXIT_USAGE
    assert run("solve", LORENZ, "--tspan", "1", "0") == cli.EXIT_USAGE
    assert run("gen-rc", "--n", "0") == cli.EXIT_USAGE


def test_parse_error(tmp_path):
    bad = tmp_path / "bad.eqm"
    bad.write_text("system a\nivar t\nstate x(t)\neq D(x) = (x\n")
    assert run("simplify", bad) == cli.EXIT_PARSE


def test_structural_error(tmp_path):
    bad = tmp_path / "under.eqm"
    bad.write_text("system a\nivar t\nstate x(t) y(t)\neq D(x) = y\n")
    assert run("simplify", bad) == cli.EXIT_STRUCTURAL


def test_numerical_error(tmp_path):
    bad = tmp_path / "blow.eqm"
    bad.write_text("system a\nivar t\nstate x(t)\ndefault x = 1.0\neq D(x) = x^2\n")
    out = tmp_path / "blow.csv"
    assert run("solve", bad, "--tspan", "0", "2", "--out", out) == cli.EXIT_NUMERICAL
    assert out.exists()


def test_solve_csv(tmp_path):
    out = tmp_path / "lorenz.csv"
    assert run("solve", LORENZ, "--tspan", "0", "1", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x,y,z"
    assert lines[1].startswith("0.0,1.0,0.0,0.0")
    assert oct(os.stat(out).st_mode & 0o777) == oct(0o666 & ~_umask())


def _umask():
    m = os.umask(0)
    os.umask(m)
    return m


def test_solve_reproducible_and_parallel(tmp_path):
    rc = tmp_path / "rc.eqm"
    assert run("gen-rc", "--n", "8", "--out", rc) == 0
    a, b, c = (tmp_path / f"{k}.csv" for k in "abc")
    assert run("solve", rc, "--tspan", "0", "0.5", "--out", a) == 0
    assert run("solve", rc, "--tspan", "0", "0.5", "--out", b) == 0
    assert run("solve", rc, "--tspan", "0", "0.5", "--parallel", "--out", c) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_solve_index_reduced_with_observed(tmp_path):
    out = tmp_path / "p.csv"
    assert run("solve", PENDULUM, "--index-reduce", "--tspan", "0", "0.2", "--observed", "T", "--out", out) == 0
    assert out.read_text().splitlines()[0] == "t,x,vx,y,vy,T"
    assert run("solve", PENDULUM, "--index-reduce", "--observed", "nope", "--out", out) == cli.EXIT_USAGE


@pytest.mark.parametrize("method", ["rk4", "ieuler"])
def test_other_methods(tmp_path, method):
    out = tmp_path / "s.csv"
    assert run("solve", DATA / "stiff3.eqm", "--method", method, "--dt", "1e-3", "--out", out) == 0
    assert out.read_text().splitlines()[0].startswith("t,")


def test_spy_formats(tmp_path, capsys):
    assert run("spy", PENDULUM) == 0
    text = capsys.readouterr().out
    assert len(text.splitlines()) == 5 and set(text) <= set("#.\n")
    out = tmp_path / "p.pbm"
    assert run("spy", PENDULUM, "--stage", "blt", "--index-reduce", "--format", "pbm", "--out", out) == 0
    assert out.read_text().startswith("P1\n")
    assert run("spy", PENDULUM, "--stage", "torn", "--index-reduce") == 0
    capsys.readouterr()
    assert run("spy", PENDULUM, "--algebraic-only") == 0
    # constraint row over x vx y vy T
    assert capsys.readouterr().out == "#.#..\n"


def test_index_reduce_and_liouville(tmp_path, capsys):
    out = tmp_path / "red.eqm"
    assert run("index-reduce", PENDULUM, "--out", out) == 0
    assert "differentiated 2x" in out.read_text()
    assert run("simplify", out) == 0
    assert run("liouville", LORENZ, "--name", "w") == 0
    assert "state" in capsys.readouterr().out


def test_surrogatize(tmp_path):
    out = tmp_path / "s.json"
    args = ["surrogatize", DATA / "stiff3.eqm", "--outputs", "f,y", "--box", "k=5:20",
            "--samples", "4", "--reservoir", "30", "--grid", "40", "--out", out]
    assert run(*args) == 0
    first = out.read_bytes()
    assert run(*args) == 0
    assert out.read_bytes() == first
    assert run("surrogatize", DATA / "stiff3.eqm", "--outputs", "f", "--box", "k=5", "--out", out) == cli.EXIT_USAGE
    assert run("surrogatize", DATA / "stiff3.eqm", "--outputs", "zz", "--box", "k=5:6", "--out", out) == cli.EXIT_NUMERICAL
