"""Recover an equation system from a numerical right-hand-side program.

The program is run once with :class:`TraceValue` inputs; operator
overloading records every arithmetic operation as an expression node.
Programs must be quasi-static: branching on a symbolic value raises
:class:`QuasiStaticError`, loops with fixed trip counts simply unroll.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .symcore import (
    Apply,
    Const,
    Deriv,
    Equation,
    Expr,
    Sym,
    ZERO,
    as_expr,
    fn,
    independent,
    parameters,
    variables,
)
from .sysmodel import OdeSystem, flatten, make_system


class TracingError(Exception):
    pass


class QuasiStaticError(TracingError):
    """Control flow depended on a symbolic value."""


def _wrap(v) -> "TraceValue":
    if isinstance(v, TraceValue):
        return v
    if isinstance(v, bool):
        raise TracingError("booleans are not numeric trace values")
    if isinstance(v, numbers.Integral):
        return TraceValue(Const(int(v)))
    if isinstance(v, numbers.Real):
        f = float(v)
        if not math.isfinite(f):
            raise TracingError(f"non-finite constant {f} encountered while tracing")
        return TraceValue(Const(f))
    raise TypeError(f"cannot trace a value of type {type(v).__name__}")


class TraceValue:
    """Number-like wrapper whose operations build expression nodes."""

    __slots__ = ("expr",)
    __array_priority__ = 100

    def __init__(self, expr):
        self.expr = as_expr(expr)

    def __repr__(self):
        return f"TraceValue({self.expr})"

    # arithmetic

    def _bin(self, op, other, reflected=False):
        try:
            o = _wrap(other)
        except TypeError:
            return NotImplemented
        a, b = (o.expr, self.expr) if reflected else (self.expr, o.expr)
        return TraceValue(Apply(op, (a, b)))

    def __add__(self, o):
        return self._bin("add", o)

    def __radd__(self, o):
        return self._bin("add", o, True)

    def __sub__(self, o):
        try:
            w = _wrap(o)
        except TypeError:
            return NotImplemented
        return TraceValue(self.expr - w.expr)

    def __rsub__(self, o):
        try:
            w = _wrap(o)
        except TypeError:
            return NotImplemented
        return TraceValue(w.expr - self.expr)

    def __mul__(self, o):
        return self._bin("mul", o)

    def __rmul__(self, o):
        return self._bin("mul", o, True)

    def __truediv__(self, o):
        return self._bin("div", o)

    def __rtruediv__(self, o):
        return self._bin("div", o, True)

    def __pow__(self, o):
        return self._bin("pow", o)

    def __rpow__(self, o):
        return self._bin("pow", o, True)

    def __neg__(self):
        return TraceValue(Apply("neg", (self.expr,)))

    def __pos__(self):
        return self

    def __abs__(self):
        return TraceValue(fn("abs", self.expr))

    # elementary functions; numpy object arrays dispatch to these methods

    def sin(self):
        return TraceValue(fn("sin", self.expr))

    def cos(self):
        return TraceValue(fn("cos", self.expr))

    def tan(self):
        return TraceValue(fn("tan", self.expr))

    def exp(self):
        return TraceValue(fn("exp", self.expr))

    def log(self):
        return TraceValue(fn("log", self.expr))

    def sqrt(self):
        return TraceValue(fn("sqrt", self.expr))

    # quasi-static guard

    def _const(self, what):
        if isinstance(self.expr, Const):
            return self.expr.value
        raise QuasiStaticError(f"{what} on symbolic value {self.expr}; the program must be quasi-static")

    def _cmp(self, other, op):
        o = _wrap(other)
        a = self._const("comparison")
        b = o._const("comparison")
        return op(a, b)

    def __lt__(self, o):
        return self._cmp(o, lambda a, b: a < b)

    def __le__(self, o):
        return self._cmp(o, lambda a, b: a <= b)

    def __gt__(self, o):
        return self._cmp(o, lambda a, b: a > b)

    def __ge__(self, o):
        return self._cmp(o, lambda a, b: a >= b)

    def __eq__(self, o):
        return self._cmp(o, lambda a, b: a == b)

    def __ne__(self, o):
        return self._cmp(o, lambda a, b: a != b)

    def __bool__(self):
        return bool(self._const("truth test"))

    def __float__(self):
        return float(self._const("float conversion"))

    def __int__(self):
        return int(self._const("int conversion"))

    def __index__(self):
        v = self._const("indexing")
        if isinstance(v, Fraction) and v.denominator == 1:
            return int(v)
        raise QuasiStaticError(f"non-integer index {v}")

    __hash__ = None


def _dispatch(name, mfunc):
    def f(x):
        if isinstance(x, TraceValue):
            return getattr(x, name)()
        return mfunc(x)

    f.__name__ = name
    f.__doc__ = f"``{name}`` for floats and trace values."
    return f


sin = _dispatch("sin", math.sin)
cos = _dispatch("cos", math.cos)
tan = _dispatch("tan", math.tan)
exp = _dispatch("exp", math.exp)
log = _dispatch("log", math.log)
sqrt = _dispatch("sqrt", math.sqrt)


class _OutputRecorder:
    """Writable ``du`` vector that insists on exactly one write per slot."""

    def __init__(self, n: int):
        self.values: list = [None] * n

    def __len__(self):
        return len(self.values)

    def _index(self, i) -> int:
        i = i.__index__() if isinstance(i, TraceValue) else i
        if not isinstance(i, numbers.Integral):
            raise TracingError(f"du index must be an integer, got {i!r}")
        n = len(self.values)
        if not -n <= i < n:
            raise TracingError(f"du index {i} out of range for {n} outputs")
        return int(i) % n

    def __setitem__(self, i, v):
        k = self._index(i)
        if self.values[k] is not None:
            raise TracingError(f"du[{k}] written more than once")
        self.values[k] = _wrap(v)

    def __getitem__(self, i):
        k = self._index(i)
        if self.values[k] is None:
            raise TracingError(f"du[{k}] read before it was written")
        return self.values[k]


@dataclass
class TraceProblem:
    """A numerical RHS program plus the metadata needed to trace it.

    Attributes:
        rhs: ``rhs(du, u, p, t)`` writing every ``du[i]`` once (0-based).
        n_states: Length of ``u`` and ``du``.
        n_params: Length of ``p``.
        mass_diag: 1 for differential rows, 0 for algebraic rows; all ones
            when omitted.
        u0: Default initial state.
        p0: Default parameter values.
        tspan: Default time span.
    """

    rhs: Callable
    n_states: int
    n_params: int = 0
    mass_diag: Optional[Sequence[int]] = None
    u0: Optional[Sequence[float]] = None
    p0: Optional[Sequence[float]] = None
    tspan: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.mass_diag is None:
            self.mass_diag = [1] * self.n_states
        if len(self.mass_diag) != self.n_states or any(m not in (0, 1) for m in self.mass_diag):
            raise ValueError("mass_diag must be a 0/1 vector of length n_states")
        for name, v, n in (("u0", self.u0, self.n_states), ("p0", self.p0, self.n_params)):
            if v is not None and len(v) != n:
                raise ValueError(f"{name} has length {len(v)}, expected {n}")


def modelingtoolkitize(prob: TraceProblem, name: str = "traced", ivar: str = "t",
                       state_prefix: str = "u", param_prefix: str = "p") -> OdeSystem:
    """Trace ``prob.rhs`` into a system with states ``u1..un`` and parameters ``p1..pm``."""
    t = independent(ivar)
    us = variables([f"{state_prefix}{i + 1}" for i in range(prob.n_states)], t)
    ps = parameters([f"{param_prefix}{i + 1}" for i in range(prob.n_params)])
    du = _OutputRecorder(prob.n_states)
    prob.rhs(du, [TraceValue(u) for u in us], [TraceValue(p) for p in ps], TraceValue(t))
    missing = [i for i, v in enumerate(du.values) if v is None]
    if missing:
        raise TracingError(f"du slots never written: {missing}")
    eqs = []
    D = t.sym
    for u, m, v in zip(us, prob.mass_diag, du.values):
        eqs.append(Equation(Deriv(u, D, 1), v.expr) if m else Equation(ZERO, v.expr))
    defaults = {}
    if prob.u0 is not None:
        defaults.update({u: float(x) for u, x in zip(us, prob.u0)})
    if prob.p0 is not None:
        defaults.update({p: float(x) for p, x in zip(ps, prob.p0)})
    return make_system(name, t, eqs, us, ps, defaults=defaults)


def _generic_eval(e: Expr, env: dict):
    """Evaluate over any number-like type (floats or trace values)."""
    if isinstance(e, Const):
        v = e.value
        return int(v) if isinstance(v, Fraction) and v.denominator == 1 else float(v)
    if isinstance(e, Sym):
        return env[e.sym]
    if isinstance(e, Deriv):
        raise TracingError(f"derivative {e} cannot appear on a right-hand side")
    vals = [_generic_eval(a, env) for a in e.args]
    op = e.op
    if op == "add":
        acc = vals[0]
        for v in vals[1:]:
            acc = acc + v
        return acc
    if op == "mul":
        acc = vals[0]
        for v in vals[1:]:
            acc = acc * v
        return acc
    if op == "neg":
        return -vals[0]
    if op == "div":
        return vals[0] / vals[1]
    if op == "pow":
        return vals[0] ** vals[1]
    if op == "abs":
        return abs(vals[0])
    return globals()[op](vals[0])


def system_program(sys) -> tuple[Callable, list[int]]:
    """Lower a mass-matrix-form system to a plain ``rhs(du, u, p, t)`` program.

    Row ``i`` belongs to state ``i``: either ``D(s_i) ~ f`` or, for algebraic
    states, the next algebraic equation ``0 ~ g``. Returns the program and its
    mass diagonal.
    """
    flat = flatten(sys)
    states, params = list(flat.states), list(flat.parameters)
    rows, mass = [], []
    diff = {}
    alg = []
    for eq in flat.equations:
        if isinstance(eq.lhs, Deriv) and eq.lhs.order == 1 and isinstance(eq.lhs.arg, Sym):
            diff[eq.lhs.arg.sym] = eq.rhs
        else:
            alg.append(eq.rhs if eq.lhs == ZERO else eq.rhs - eq.lhs)
    alg_iter = iter(alg)
    for s in states:
        if s in diff:
            rows.append(diff[s])
            mass.append(1)
        else:
            rows.append(next(alg_iter))
            mass.append(0)

    def program(du, u, p, t):
        env = dict(zip(states, u))
        env.update(zip(params, p))
        env[flat.ivar] = t
        for i, r in enumerate(rows):
            du[i] = _generic_eval(r, env)

    return program, mass
