"""Immutable symbolic expressions.

Expressions are frozen dataclasses compared structurally. Every transformation
returns a new tree; nothing is mutated after construction, so expressions can be
shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence, Union

STATE = "state"
PARAMETER = "parameter"
INDEPENDENT = "independent"
KINDS = (STATE, PARAMETER, INDEPENDENT)

NARY_OPS = ("add", "mul")
BINARY_OPS = ("pow", "div")
UNARY_OPS = ("neg", "sin", "cos", "tan", "exp", "log", "sqrt", "abs")
FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")
OPS = NARY_OPS + BINARY_OPS + UNARY_OPS


class SymbolicError(Exception):
    """Base class for errors raised by symbolic manipulation."""


class DifferentiationError(SymbolicError):
    pass


class EvaluationError(SymbolicError):
    pass


class UnboundSymbolError(EvaluationError):
    pass


class SimplificationError(SymbolicError):
    pass


@dataclass(frozen=True)
class SymbolId:
    """A named unknown, parameter or independent variable.

    ``namespace`` holds the hierarchical path of enclosing subsystems, so the
    symbol ``x`` of subsystem ``lorenz1`` has namespace ``("lorenz1",)``.
    """

    name: str
    namespace: tuple[str, ...] = ()
    kind: str = STATE
    dependency: SymbolId | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown symbol kind {self.kind!r}")
        if self.kind == INDEPENDENT and self.dependency is not None:
            raise ValueError("independent variables cannot depend on anything")
        if self.kind == STATE and self.dependency is None:
            raise ValueError(f"state {self.name!r} needs an independent variable")
        if self.dependency is not None and self.dependency.kind != INDEPENDENT:
            raise ValueError("dependency must be an independent variable")

    @property
    def full_name(self) -> str:
        return ".".join(self.namespace + (self.name,))

    def prefixed(self, prefix: str) -> SymbolId:
        if self.kind == INDEPENDENT:
            return self
        return SymbolId(self.name, (prefix,) + self.namespace, self.kind, self.dependency)

    def renamed(self, name: str) -> SymbolId:
        return SymbolId(name, self.namespace, self.kind, self.dependency)

    def __str__(self):
        return self.full_name


class Expr:
    """Base class of expression nodes; provides operator sugar.

    The arithmetic operators build raw (unsimplified) nodes. ``==`` is
    structural equality, so equations are built with :class:`Equation`.
    """

    __slots__ = ()

    def __add__(self, other):
        return Apply("add", (self, as_expr(other)))

    def __radd__(self, other):
        return Apply("add", (as_expr(other), self))

    def __sub__(self, other):
        return Apply("add", (self, Apply("neg", (as_expr(other),))))

    def __rsub__(self, other):
        return Apply("add", (as_expr(other), Apply("neg", (self,))))

    def __mul__(self, other):
        return Apply("mul", (self, as_expr(other)))

    def __rmul__(self, other):
        return Apply("mul", (as_expr(other), self))

    def __truediv__(self, other):
        return Apply("div", (self, as_expr(other)))

    def __rtruediv__(self, other):
        return Apply("div", (as_expr(other), self))

    def __pow__(self, other):
        return Apply("pow", (self, as_expr(other)))

    def __rpow__(self, other):
        return Apply("pow", (as_expr(other), self))

    def __neg__(self):
        return Apply("neg", (self,))

    def __pos__(self):
        return self

    def __str__(self):
        return render(self)

    @cached_property
    def sort_key(self) -> tuple:
        return _sort_key(self)


@dataclass(frozen=True, eq=True, repr=False)
class Const(Expr):
    value: Union[Fraction, float]

    def __post_init__(self):
        v = self.value
        if isinstance(v, bool):
            raise TypeError("booleans are not constants")
        if isinstance(v, int):
            object.__setattr__(self, "value", Fraction(v))
        elif isinstance(v, float):
            if not math.isfinite(v):
                raise SymbolicError(f"non-finite constant {v!r}")
        elif not isinstance(v, Fraction):
            raise TypeError(f"unsupported constant type {type(v).__name__}")

    def __hash__(self):
        return hash(("Const", self.value))

    def __repr__(self):
        return f"Const({self.value!r})"

    @property
    def is_exact(self) -> bool:
        return isinstance(self.value, Fraction)


@dataclass(frozen=True, eq=True, repr=False)
class Sym(Expr):
    sym: SymbolId

    def __hash__(self):
        return hash(("Sym", self.sym))

    def __repr__(self):
        return f"Sym({self.sym.full_name})"


@dataclass(frozen=True, eq=True, repr=False)
class Apply(Expr):
    op: str
    args: tuple

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown operator {self.op!r}")
        args = tuple(self.args)
        object.__setattr__(self, "args", args)
        if self.op in NARY_OPS and len(args) < 2:
            raise ValueError(f"{self.op} needs at least two arguments")
        if self.op in BINARY_OPS and len(args) != 2:
            raise ValueError(f"{self.op} takes two arguments")
        if self.op in UNARY_OPS and len(args) != 1:
            raise ValueError(f"{self.op} takes one argument")

    @cached_property
    def _hash(self):
        return hash(("Apply", self.op, self.args))

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Apply):
            return NotImplemented
        return self.op == other.op and self._hash == other._hash and self.args == other.args

    def __repr__(self):
        return f"Apply({self.op}, {list(self.args)!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Deriv(Expr):
    arg: Expr
    wrt: SymbolId
    order: int = 1

    def __post_init__(self):
        if self.wrt.kind != INDEPENDENT:
            raise ValueError("derivatives are taken with respect to the independent variable")
        if self.order < 1:
            raise ValueError("derivative order must be positive")

    def __hash__(self):
        return hash(("Deriv", self.arg, self.wrt, self.order))

    def __repr__(self):
        return f"Deriv({self.arg!r}, {self.wrt.full_name}, {self.order})"


ZERO = Const(0)
ONE = Const(1)
MINUS_ONE = Const(-1)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, SymbolId):
        return Sym(value)
    if isinstance(value, (int, float, Fraction)) and not isinstance(value, bool):
        return Const(value)
    raise TypeError(f"cannot convert {type(value).__name__} to an expression")


def deriv(e, wrt: SymbolId, order: int = 1) -> Expr:
    """Build a derivative node, merging nested derivatives of the same variable."""
    e = as_expr(e)
    if isinstance(e, Deriv) and e.wrt == wrt:
        return Deriv(e.arg, wrt, e.order + order)
    return Deriv(e, wrt, order)


class Differential:
    """Callable derivative operator, ``D = Differential(t); D(x)``."""

    def __init__(self, wrt):
        if isinstance(wrt, Sym):
            wrt = wrt.sym
        self.wrt = wrt

    def __call__(self, e) -> Expr:
        return deriv(e, self.wrt)


def fn(op: str, arg) -> Apply:
    if op not in FUNCTIONS:
        raise ValueError(f"unknown function {op!r}")
    return Apply(op, (as_expr(arg),))


def sin(x):
    return fn("sin", x)


def cos(x):
    return fn("cos", x)


def tan(x):
    return fn("tan", x)


def exp(x):
    return fn("exp", x)


def log(x):
    return fn("log", x)


def sqrt(x):
    return fn("sqrt", x)


# -- symbol helpers ---------------------------------------------------------


def independent(name: str) -> Sym:
    return Sym(SymbolId(name, (), INDEPENDENT))


def variables(names: str | Iterable[str], ivar) -> list[Sym]:
    """Declare state symbols depending on ``ivar`` (``x(t)`` style)."""
    if isinstance(names, str):
        names = names.split()
    iv = ivar.sym if isinstance(ivar, Sym) else ivar
    return [Sym(SymbolId(n, (), STATE, iv)) for n in names]


def parameters(names: str | Iterable[str]) -> list[Sym]:
    if isinstance(names, str):
        names = names.split()
    return [Sym(SymbolId(n, (), PARAMETER)) for n in names]


@dataclass(frozen=True)
class Equation:
    """``lhs ~ rhs``; the residual is ``lhs - rhs``."""

    lhs: Expr
    rhs: Expr = field(default=ZERO)

    def __post_init__(self):
        object.__setattr__(self, "lhs", as_expr(self.lhs))
        object.__setattr__(self, "rhs", as_expr(self.rhs))

    @property
    def residual(self) -> Expr:
        if self.rhs == ZERO:
            return self.lhs
        if self.lhs == ZERO:
            return Apply("neg", (self.rhs,))
        return Apply("add", (self.lhs, Apply("neg", (self.rhs,))))

    def map(self, f) -> Equation:
        return Equation(f(self.lhs), f(self.rhs))

    def __str__(self):
        return f"{render(self.lhs)} ~ {render(self.rhs)}"


# -- traversal --------------------------------------------------------------


def children(e: Expr) -> tuple:
    if isinstance(e, Apply):
        return e.args
    if isinstance(e, Deriv):
        return (e.arg,)
    return ()


def free_symbols(e: Expr) -> set[SymbolId]:
    out: set[SymbolId] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Sym):
            out.add(node.sym)
        elif isinstance(node, Deriv):
            stack.append(node.arg)
        else:
            stack.extend(children(node))
    return out


def ordered_symbols(e: Expr) -> list[SymbolId]:
    """Free symbols in first-appearance (pre-order, left to right) order."""
    seen: dict[SymbolId, None] = {}

    def walk(node):
        if isinstance(node, Sym):
            seen.setdefault(node.sym, None)
        else:
            for c in children(node):
                walk(c)

    walk(e)
    return list(seen)


def atoms(e: Expr) -> set[Expr]:
    """Variable atoms: ``Sym`` nodes outside derivatives and ``Deriv`` nodes."""
    out: set[Expr] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, (Sym, Deriv)):
            out.add(node)
        else:
            stack.extend(children(node))
    return out


def count_occurrences(e: Expr, target: Expr) -> int:
    if e == target:
        return 1
    if isinstance(e, Deriv):
        return 0
    return sum(count_occurrences(c, target) for c in children(e))


def contains_deriv(e: Expr) -> bool:
    if isinstance(e, Deriv):
        return True
    return any(contains_deriv(c) for c in children(e))


def derivative_order(e: Expr, sym: SymbolId) -> int:
    """Highest derivative order of ``sym`` in ``e`` (0 if only plain, -1 if absent)."""
    best = -1
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Sym):
            if node.sym == sym:
                best = max(best, 0)
        elif isinstance(node, Deriv):
            if node.arg == Sym(sym):
                best = max(best, node.order)
            else:
                stack.append(node.arg)
        else:
            stack.extend(children(node))
    return best


def _sort_key(e: Expr) -> tuple:
    if isinstance(e, Const):
        return (0, "", "", float(e.value), ())
    if isinstance(e, Sym):
        return (1, e.sym.kind, e.sym.full_name, 0.0, ())
    if isinstance(e, Deriv):
        return (2, "", e.wrt.full_name, float(e.order), (e.arg.sort_key,))
    return (3, e.op, "", 0.0, tuple(a.sort_key for a in e.args))


# -- substitution -----------------------------------------------------------


def _key(k) -> Expr:
    return Sym(k) if isinstance(k, SymbolId) else as_expr(k)


def substitute(e: Expr, bindings: Mapping) -> Expr:
    """Replace every occurrence of each key simultaneously.

    Keys may be :class:`SymbolId` or expression nodes (typically ``Sym`` or
    ``Deriv``). Replacement values are not revisited, so ``{x: y, y: x}``
    swaps.
    """
    if not bindings:
        return e
    table = {_key(k): as_expr(v) for k, v in bindings.items()}
    return _subst(e, table, {})


def _subst(e: Expr, table: dict, memo: dict) -> Expr:
    hit = table.get(e)
    if hit is not None:
        return hit
    if isinstance(e, (Const, Sym)):
        return e
    cached = memo.get(id(e))
    if cached is not None:
        return cached[1]
    if isinstance(e, Deriv):
        arg = _subst(e.arg, table, memo)
        out = e if arg is e.arg else deriv(arg, e.wrt, e.order)
    else:
        args = tuple(_subst(a, table, memo) for a in e.args)
        out = e if all(a is b for a, b in zip(args, e.args)) else Apply(e.op, args)
    memo[id(e)] = (e, out)
    return out


# -- simplification ---------------------------------------------------------


def _num(c: Const):
    return c.value


def _make_const(v) -> Const:
    if isinstance(v, float):
        if not math.isfinite(v):
            raise SimplificationError(f"constant folding produced {v!r}")
        if v == 0.0:
            v = 0.0
    return Const(v)


def _fold_pow(base, expo):
    if isinstance(expo, Fraction) and expo.denominator == 1 and isinstance(base, Fraction):
        if base == 0 and expo < 0:
            raise SimplificationError("zero raised to a negative power")
        return base ** int(expo)
    try:
        v = float(base) ** float(expo)
    except ZeroDivisionError as exc:
        raise SimplificationError("zero raised to a negative power") from exc
    if isinstance(v, complex):
        raise SimplificationError(f"complex result folding {base}^{expo}")
    return v


_FLOAT_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}


def _fold_fn(op, v):
    if op == "abs":
        return abs(v)
    if op == "sin" and v == 0 or op == "tan" and v == 0 or op == "sqrt" and v == 0:
        return Fraction(0)
    if op == "cos" and v == 0 or op == "exp" and v == 0 or op == "sqrt" and v == 1:
        return Fraction(1)
    if op == "log" and v == 1:
        return Fraction(0)
    try:
        return _FLOAT_FUNCS[op](float(v))
    except (ValueError, OverflowError) as exc:
        raise SimplificationError(f"domain error folding {op}({v})") from exc


def simplify_basic(e: Expr) -> Expr:
    """Constant folding, identity removal, flattening and canonical ordering.

    Like terms are combined only when structurally identical; constant
    coefficients distribute over sums, and repeated factors merge into powers.
    """
    return _simplify(e, {})


def _simplify(e: Expr, memo: dict) -> Expr:
    if isinstance(e, (Const, Sym)):
        return e
    key = id(e)
    hit = memo.get(key)
    if hit is not None:
        return hit[1]
    if isinstance(e, Deriv):
        out = _deriv_of(_simplify(e.arg, memo), e.wrt, e.order, memo)
    else:
        args = [_simplify(a, memo) for a in e.args]
        out = _SIMPLIFIERS[e.op](args) if e.op in _SIMPLIFIERS else _simplify_fn(e.op, args)
    memo[key] = (e, out)
    return out


def _deriv_of(arg: Expr, wrt: SymbolId, order: int, memo) -> Expr:
    if isinstance(arg, Sym):
        if arg.sym == wrt:
            return ONE if order == 1 else ZERO
        if arg.sym.kind == STATE and arg.sym.dependency == wrt:
            return Deriv(arg, wrt, order)
        return ZERO
    if isinstance(arg, Deriv) and arg.wrt == wrt:
        return _deriv_of(arg.arg, wrt, arg.order + order, memo)
    if isinstance(arg, Const):
        return ZERO
    out = arg
    for _ in range(order):
        out = _simplify(differentiate(out, wrt), memo)
    return out


def _split_coeff(term: Expr):
    """Split a term into (constant coefficient, base expression or None)."""
    if isinstance(term, Const):
        return term.value, None
    if isinstance(term, Apply):
        if term.op == "neg":
            c, b = _split_coeff(term.args[0])
            return -c, b
        if term.op == "mul" and isinstance(term.args[0], Const):
            rest = term.args[1:]
            return term.args[0].value, rest[0] if len(rest) == 1 else Apply("mul", rest)
    return Fraction(1), term


def _scale(c, base: Expr) -> Expr:
    if base is None:
        return _make_const(c)
    if c == 0:
        return ZERO
    if c == 1:
        return base
    if c == -1:
        return Apply("neg", (base,))
    if isinstance(base, Apply) and base.op == "mul":
        return Apply("mul", (_make_const(c),) + base.args)
    return Apply("mul", (_make_const(c), base))


def _add_terms(args: Sequence[Expr], sign=Fraction(1), acc=None):
    if acc is None:
        acc = {"const": Fraction(0), "terms": {}}
    for a in args:
        c, base = _split_coeff(a)
        c = c * sign
        if base is None:
            acc["const"] = acc["const"] + c
        elif isinstance(base, Apply) and base.op == "add":
            _add_terms(base.args, c, acc)
        else:
            terms = acc["terms"]
            terms[base] = terms.get(base, Fraction(0)) + c
    return acc


def _simplify_add(args: list[Expr]) -> Expr:
    acc = _add_terms(args)
    pieces = []
    for base, c in acc["terms"].items():
        if c != 0:
            pieces.append(_scale(c, base))
    pieces.sort(key=lambda t: t.sort_key)
    const = acc["const"]
    if const != 0:
        pieces.insert(0, _make_const(const))
    if not pieces:
        return ZERO if isinstance(const, Fraction) else _make_const(0.0)
    if len(pieces) == 1:
        return pieces[0]
    return Apply("add", tuple(pieces))


def _pow_parts(f: Expr):
    if isinstance(f, Apply) and f.op == "pow" and isinstance(f.args[1], Const):
        return f.args[0], f.args[1].value
    return f, Fraction(1)


def _simplify_mul(args: list[Expr]) -> Expr:
    coeff = Fraction(1)
    factors: list[Expr] = []
    stack = list(reversed(args))
    while stack:
        a = stack.pop()
        if isinstance(a, Const):
            coeff = coeff * a.value
        elif isinstance(a, Apply) and a.op == "neg":
            coeff = -coeff
            stack.append(a.args[0])
        elif isinstance(a, Apply) and a.op == "mul":
            stack.extend(reversed(a.args))
        else:
            factors.append(a)
    if coeff == 0:
        return _make_const(coeff) if isinstance(coeff, float) else ZERO
    powers: dict[Expr, object] = {}
    for f in factors:
        base, expo = _pow_parts(f)
        powers[base] = powers.get(base, Fraction(0)) + expo
    merged = []
    for base, expo in powers.items():
        if expo == 0:
            continue
        merged.append(base if expo == 1 else _simplify_pow([base, _make_const(expo)]))
    merged.sort(key=lambda t: t.sort_key)
    if not merged:
        return _make_const(coeff)
    if len(merged) == 1 and isinstance(merged[0], Apply) and merged[0].op == "add" and coeff != 1:
        return _simplify_add([_scale(coeff, t) for t in merged[0].args])
    core = merged[0] if len(merged) == 1 else Apply("mul", tuple(merged))
    return _scale(coeff, core)


def _simplify_neg(args: list[Expr]) -> Expr:
    (a,) = args
    if isinstance(a, Const):
        return _make_const(-a.value)
    if isinstance(a, Apply) and a.op == "neg":
        return a.args[0]
    if isinstance(a, Apply) and a.op == "add":
        return _simplify_add([Apply("neg", (t,)) for t in a.args])
    if isinstance(a, Apply) and a.op == "mul" and isinstance(a.args[0], Const):
        return _simplify_mul([_make_const(-a.args[0].value)] + list(a.args[1:]))
    return Apply("neg", (a,))


def _simplify_div(args: list[Expr]) -> Expr:
    num, den = args
    if isinstance(den, Const):
        if den.value == 0:
            raise SimplificationError("division by literal zero")
        if isinstance(num, Const):
            v = num.value / den.value
            return _make_const(v)
        if den.value == 1:
            return num
        if den.value == -1:
            return _simplify_neg([num])
    if isinstance(num, Const) and num.value == 0:
        return ZERO
    if num == den:
        return ONE
    c, base = _split_coeff(num)
    if c != 1 and base is not None:
        return _scale(c, Apply("div", (base, den)))
    return Apply("div", (num, den))


def _simplify_pow(args: list[Expr]) -> Expr:
    base, expo = args
    if isinstance(expo, Const):
        if expo.value == 0:
            return ONE
        if expo.value == 1:
            return base
        if isinstance(base, Const):
            return _make_const(_fold_pow(base.value, expo.value))
    if isinstance(base, Const) and base.value == 1:
        return ONE
    if isinstance(base, Const) and base.value == 0 and isinstance(expo, Const) and expo.value > 0:
        return ZERO
    return Apply("pow", (base, expo))


def _simplify_fn(op: str, args: list[Expr]) -> Expr:
    (a,) = args
    if isinstance(a, Const):
        return _make_const(_fold_fn(op, a.value))
    return Apply(op, (a,))


_SIMPLIFIERS = {
    "add": _simplify_add,
    "mul": _simplify_mul,
    "neg": _simplify_neg,
    "div": _simplify_div,
    "pow": _simplify_pow,
}


# -- differentiation --------------------------------------------------------


def differentiate(e: Expr, wrt) -> Expr:
    """Exact symbolic derivative, simplified.

    With an independent variable ``wrt`` this is the total derivative: states
    depending on it produce ``Deriv`` nodes. With a state or parameter (or a
    ``Deriv`` atom) it is the partial derivative, treating every other atom as
    constant.
    """
    if isinstance(wrt, Sym):
        wrt = wrt.sym
    if isinstance(wrt, SymbolId):
        total = wrt.kind == INDEPENDENT
        target = Sym(wrt)
    elif isinstance(wrt, Deriv):
        total = False
        target = wrt
    else:
        raise TypeError("differentiate needs a SymbolId or Deriv atom")
    return simplify_basic(_d(e, target, total, {}))


def _d(e: Expr, target: Expr, total: bool, memo: dict) -> Expr:
    key = id(e)
    hit = memo.get(key)
    if hit is not None:
        return hit[1]
    out = _d_node(e, target, total, memo)
    memo[key] = (e, out)
    return out


def _d_node(e, target, total, memo) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if e == target:
        return ONE
    if isinstance(e, Sym):
        if total and e.sym.kind == STATE and e.sym.dependency == target.sym:
            return Deriv(e, target.sym, 1)
        return ZERO
    if isinstance(e, Deriv):
        if total and e.wrt == target.sym:
            if isinstance(e.arg, Sym):
                return Deriv(e.arg, e.wrt, e.order + 1)
            inner = e.arg
            for _ in range(e.order):
                inner = _d(simplify_basic(inner), target, total, {})
            return _d(simplify_basic(inner), target, total, memo)
        return ZERO
    op, args = e.op, e.args
    d = lambda a: _d(a, target, total, memo)  # noqa: E731
    if op == "add":
        return Apply("add", tuple(d(a) for a in args))
    if op == "mul":
        terms = []
        for i in range(len(args)):
            di = d(args[i])
            if di == ZERO:
                continue
            terms.append(Apply("mul", args[:i] + (di,) + args[i + 1:]))
        if not terms:
            return ZERO
        return terms[0] if len(terms) == 1 else Apply("add", tuple(terms))
    if op == "neg":
        return Apply("neg", (d(args[0]),))
    if op == "div":
        a, b = args
        da, db = d(a), d(b)
        if db == ZERO:
            return Apply("div", (da, b))
        return Apply(
            "div",
            (Apply("add", (Apply("mul", (da, b)), Apply("neg", (Apply("mul", (a, db)),)))),
             Apply("pow", (b, Const(2)))),
        )
    if op == "pow":
        a, b = args
        da, db = d(a), d(b)
        if db == ZERO:
            return Apply("mul", (b, Apply("pow", (a, Apply("add", (b, MINUS_ONE)))), da))
        return Apply(
            "mul",
            (e, Apply("add", (Apply("mul", (db, Apply("log", (a,)))), Apply("div", (Apply("mul", (b, da)), a))))),
        )
    (a,) = args
    da = d(a)
    if op == "abs":
        raise DifferentiationError(f"abs has no derivative at zero; cannot differentiate {render(e)}")
    if da == ZERO:
        return ZERO
    if op == "sin":
        return Apply("mul", (Apply("cos", (a,)), da))
    if op == "cos":
        return Apply("neg", (Apply("mul", (Apply("sin", (a,)), da)),))
    if op == "tan":
        return Apply("div", (da, Apply("pow", (Apply("cos", (a,)), Const(2)))))
    if op == "exp":
        return Apply("mul", (e, da))
    if op == "log":
        return Apply("div", (da, a))
    if op == "sqrt":
        return Apply("div", (da, Apply("mul", (Const(2), e))))
    raise DifferentiationError(f"no derivative rule for {op}")


def jacobian(eqs: Sequence[Equation], vars: Sequence) -> list[list[Expr]]:
    """Matrix of partial derivatives of each residual with respect to each variable."""
    residuals = [simplify_basic(eq.residual if isinstance(eq, Equation) else eq) for eq in eqs]
    return [[differentiate(r, v) for v in vars] for r in residuals]


def trace(matrix: Sequence[Sequence[Expr]]) -> Expr:
    diag = [matrix[i][i] for i in range(min(len(matrix), len(matrix[0]) if matrix else 0))]
    if not diag:
        return ZERO
    if len(diag) == 1:
        return simplify_basic(diag[0])
    return simplify_basic(Apply("add", tuple(diag)))


# -- evaluation -------------------------------------------------------------


def _env_lookup(env: Mapping, node: Expr):
    if isinstance(node, Sym):
        if node.sym in env:
            return env[node.sym]
        if node in env:
            return env[node]
        raise UnboundSymbolError(f"unbound symbol {node.sym.full_name}")
    if node in env:
        return env[node]
    raise UnboundSymbolError(f"unbound derivative {render(node)}")


def evaluate(e: Expr, env: Mapping) -> float:
    """Evaluate in IEEE double precision, reducing n-ary nodes left to right."""
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, (Sym, Deriv)):
        return float(_env_lookup(env, e))
    vals = [evaluate(a, env) for a in e.args]
    return _apply_float(e.op, vals)


def _apply_float(op: str, vals: list[float]) -> float:
    try:
        if op == "add":
            acc = vals[0]
            for v in vals[1:]:
                acc += v
            return acc
        if op == "mul":
            acc = vals[0]
            for v in vals[1:]:
                acc *= v
            return acc
        if op == "neg":
            return -vals[0]
        if op == "div":
            return vals[0] / vals[1]
        if op == "pow":
            out = vals[0] ** vals[1]
            if isinstance(out, complex):
                raise EvaluationError(f"complex result of {vals[0]}^{vals[1]}")
            return out
        return _FLOAT_FUNCS[op](vals[0])
    except ZeroDivisionError as exc:
        raise EvaluationError(f"division by zero in {op}") from exc
    except (ValueError, OverflowError) as exc:
        raise EvaluationError(f"domain error in {op}{tuple(vals)}") from exc


# -- rendering --------------------------------------------------------------


def _render_const(v) -> str:
    if isinstance(v, Fraction):
        if v.denominator == 1:
            s = str(v.numerator)
        else:
            s = f"{v.numerator}/{v.denominator}"
            return f"({s})"
        return f"({s})" if v < 0 else s
    s = repr(float(v))
    return f"({s})" if v < 0 or s.startswith("-") else s


def render(e: Expr) -> str:
    """Canonical fully parenthesized infix text; ``D(x)`` marks derivatives."""
    if isinstance(e, Const):
        return _render_const(e.value)
    if isinstance(e, Sym):
        return e.sym.full_name
    if isinstance(e, Deriv):
        inner = render(e.arg)
        for _ in range(e.order):
            inner = f"D({inner})"
        return inner
    op, args = e.op, e.args
    if op == "add":
        return "(" + " + ".join(render(a) for a in args) + ")"
    if op == "mul":
        return "(" + "*".join(render(a) for a in args) + ")"
    if op == "div":
        return f"({render(args[0])} / {render(args[1])})"
    if op == "pow":
        return f"({render(args[0])}^{render(args[1])})"
    if op == "neg":
        # keep -(2) distinct from the literal (-2)
        inner = render(args[0])
        return f"(-({inner}))" if isinstance(args[0], Const) and not inner.startswith("(") else f"(-{inner})"
    return f"{op}({render(args[0])})"
