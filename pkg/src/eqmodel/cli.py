"""Command-line driver.

Exit codes: 0 success, 2 usage or I/O error, 3 parse error, 4 structural
failure, 5 numerical failure. Output files are written atomically.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import models
from .dsl import ParseError, load_model, render_model
from .fileio import atomic_write_text
from .runtime import RuntimeFailure, compile, reconstruct_observed
from .scheduler import render_spy, torn_incidence
from .solvers import SolverOptions, residual_form, solve_implicit_euler_mass_matrix, solve_rk4_fixed, solve_tsit5
from .structural import (
    StructuralError,
    build_incidence,
    dae_index_lowering,
    liouville_transform,
    pantelides,
    structural_simplify,
)
from .symcore import EvaluationError, SymbolicError
from .sysmodel import ModelError, flatten

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_STRUCTURAL = 4
EXIT_NUMERICAL = 5

DRIFT_THRESHOLD = 1e-2

log = logging.getLogger("eqmodel")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _emit(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)


def _load(path: str):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_USAGE) from None


def _prepare(args):
    sys_ = _load(args.model)
    if getattr(args, "index_reduce", False):
        sys_ = dae_index_lowering(sys_)
    return sys_


# -- commands ---------------------------------------------------------------


def cmd_simplify(args) -> int:
    s = structural_simplify(_prepare(args))
    summary = s.summary()
    for k, v in summary.items():
        print(f"{k}: {v}")
    if args.out:
        _emit(render_model(s.reduced), args.out)
    return EXIT_OK


def cmd_index_reduce(args) -> int:
    red, counts = pantelides(_load(args.model))
    comments = {i: f"differentiated {c}x" for i, c in enumerate(counts)}
    _emit(render_model(red, comments=comments), args.out)
    return EXIT_OK


def cmd_spy(args) -> int:
    sys_ = _prepare(args)
    if args.stage == "raw":
        doc = render_spy(build_incidence(flatten(sys_), highest_order_only=False), algebraic_only=args.algebraic_only)
    else:
        s = structural_simplify(sys_)
        if args.stage == "blt":
            doc = render_spy(s.blt.incidence, s.blt, algebraic_only=args.algebraic_only)
        else:
            doc = render_spy(torn_incidence(s))
    _emit(doc.to_pbm() if args.format == "pbm" else doc.to_text(), args.out)
    return EXIT_OK


def _csv(header: Sequence[str], ts, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for t, row in zip(ts, rows):
        buf.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")
    return buf.getvalue()


def cmd_solve(args) -> int:
    sys_ = _prepare(args)
    t0, t1 = args.tspan
    if not t0 < t1:
        raise CliError("--tspan needs start < end", EXIT_USAGE)
    if args.method == "ieuler":
        f, mass, states = residual_form(sys_)
        flat = flatten(sys_)
        u0 = [flat.defaults.get(s, 0.0) for s in states]
        p = [flat.defaults[q] for q in flat.parameters]
        sol = solve_implicit_euler_mass_matrix(f, mass, u0, (t0, t1), p, args.dt or 1e-3)
        header = ["t"] + [s.full_name for s in states]
        rows = sol.us
        if sol.success:
            alg = [i for i, m in enumerate(mass) if m == 0]
            if alg:
                drift = max(float(np.max(np.abs(f(u, p, t)[alg]))) for t, u in zip(sol.ts, sol.us))
                if drift > DRIFT_THRESHOLD:
                    print(f"warning: algebraic constraint drift {drift:.3e} exceeds {DRIFT_THRESHOLD}", file=sys.stderr)
    else:
        s = structural_simplify(sys_)
        c = compile(s)
        u0 = c.default_state()
        p = c.default_parameters()
        rhs = c.with_parallel(args.parallel)
        if args.method == "tsit5":
            opts = SolverOptions(abstol=args.abstol, reltol=args.reltol, **({"dt0": args.dt} if args.dt else {}))
            sol = solve_tsit5(rhs, u0, (t0, t1), p, opts)
        else:
            sol = solve_rk4_fixed(rhs, u0, (t0, t1), p, args.dt or 1e-3)
        header = ["t"] + [x.full_name for x in c.states]
        rows = sol.us
        if args.observed:
            names = [n.strip() for n in args.observed.split(",") if n.strip()]
            obs_rows = []
            for t, u in zip(sol.ts, sol.us):
                vals = {k.full_name: v for k, v in reconstruct_observed(s, u, p, t, c).items()}
                missing = [n for n in names if n not in vals]
                if missing:
                    raise CliError(f"unknown observed variables: {missing}", EXIT_USAGE)
                obs_rows.append([vals[n] for n in names])
            header += names
            rows = np.hstack([sol.us, np.array(obs_rows).reshape(len(sol.ts), len(names))])
        c.close()
    if not np.all(np.isfinite(rows)):
        raise CliError("non-finite values in solution", EXIT_NUMERICAL)
    if args.out:
        _emit(_csv(header, sol.ts, rows), args.out)
    if not sol.success:
        raise CliError(f"solver stopped with status {sol.status} at t={sol.ts[-1]!r}: {sol.message}", EXIT_NUMERICAL)
    if not args.out:
        _emit(_csv(header, sol.ts, rows), None)
    return EXIT_OK


def cmd_liouville(args) -> int:
    _emit(render_model(liouville_transform(_load(args.model), name=args.name)), args.out)
    return EXIT_OK


def _parse_box(text: str) -> dict:
    box = {}
    for item in text.split(","):
        try:
            name, rng = item.split("=")
            lo, hi = rng.split(":")
            box[name.strip()] = (float(lo), float(hi))
        except ValueError:
            raise CliError(f"bad --box entry {item!r}; expected name=lo:hi", EXIT_USAGE) from None
    return box


def cmd_surrogatize(args) -> int:
    from .surrogate import CtesnConfig, SurrogateError, train_ctesn

    outputs = [o.strip() for o in args.outputs.split(",") if o.strip()]
    if not outputs:
        raise CliError("--outputs must name at least one variable", EXIT_USAGE)
    cfg = CtesnConfig(reservoir_size=args.reservoir, n_train_samples=args.samples, seed=args.seed,
                      n_grid=args.grid, ridge=args.ridge)
    s = structural_simplify(_prepare(args))
    try:
        sur = train_ctesn(s, outputs, _parse_box(args.box), cfg, tuple(args.tspan))
    except SurrogateError as exc:
        raise CliError(str(exc), EXIT_NUMERICAL) from None
    sur.save(args.out)
    print(f"trained surrogate of {','.join(sur.output_names)} on {len(sur.samples)} samples -> {args.out}")
    return EXIT_OK


def cmd_gen_rc(args) -> int:
    if args.n < 1:
        raise CliError("--n must be >= 1", EXIT_USAGE)
    _emit(render_model(models.rc_circuits(args.n)), args.out)
    return EXIT_OK


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eqmodel", description="Acausal equation-based modeling compiler.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def model_cmd(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("model", help="model file")
        p.set_defaults(func=fn)
        return p

    p = model_cmd("simplify", cmd_simplify, "structural simplification summary")
    p.add_argument("--index-reduce", action="store_true", help="run index reduction first")
    p.add_argument("--out", help="write the reduced system here")

    p = model_cmd("index-reduce", cmd_index_reduce, "structural index reduction")
    p.add_argument("--out", help="output model file (default stdout)")

    p = model_cmd("spy", cmd_spy, "incidence pattern")
    p.add_argument("--stage", choices=("raw", "blt", "torn"), default="raw")
    p.add_argument("--format", choices=("text", "pbm"), default="text")
    p.add_argument("--index-reduce", action="store_true")
    p.add_argument("--algebraic-only", action="store_true", help="drop differential equations and derivative columns")
    p.add_argument("--out")

    p = model_cmd("solve", cmd_solve, "integrate a model and write CSV")
    p.add_argument("--method", choices=("tsit5", "rk4", "ieuler"), default="tsit5")
    p.add_argument("--tspan", nargs=2, type=float, default=(0.0, 1.0), metavar=("T0", "T1"))
    p.add_argument("--abstol", type=float, default=1e-8)
    p.add_argument("--reltol", type=float, default=1e-8)
    p.add_argument("--dt", type=float, default=None, help="fixed step (rk4, ieuler) or initial step (tsit5)")
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--index-reduce", action="store_true")
    p.add_argument("--observed", help="comma-separated observed variables to append")
    p.add_argument("--out")

    p = model_cmd("liouville", cmd_liouville, "append the phase-volume state")
    p.add_argument("--name", default="trJ")
    p.add_argument("--out")

    p = model_cmd("surrogatize", cmd_surrogatize, "train and save a CTESN surrogate")
    p.add_argument("--outputs", required=True)
    p.add_argument("--box", required=True, help="name=lo:hi[,name=lo:hi...]")
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--reservoir", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--ridge", type=float, default=1e-8)
    p.add_argument("--tspan", nargs=2, type=float, default=(0.0, 1.0), metavar=("T0", "T1"))
    p.add_argument("--index-reduce", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-rc", help="generate the RC circuit benchmark model")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_rc)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (StructuralError, ModelError) as exc:
        print(f"structural error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL
    except (RuntimeFailure, EvaluationError, SymbolicError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
