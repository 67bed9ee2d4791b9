"""Line-oriented model language: parsing and canonical rendering.

Grammar (one declaration per line, ``#`` starts a comment)::

    system <name>
    ivar t
    param sigma rho beta
    state x(t) y(t)
    default x = 1.0
    eq D(x) = sigma*(y - x)
    subsystem <name> {
        ...declarations of the component...
    }
    connect-eq 0 = lorenz1.x + lorenz2.y + a*gamma

Expressions are infix with ``^`` for powers and ``D(.)`` for time
derivatives. Dotted names refer to symbols of subsystems. A chain of ``+``
or ``*`` at one parenthesis level becomes a single n-ary node, so rendering
and re-parsing reproduce the expression tree exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .symcore import (
    FUNCTIONS,
    INDEPENDENT,
    PARAMETER,
    STATE,
    Apply,
    Const,
    Deriv,
    Equation,
    Expr,
    Sym,
    SymbolId,
    ZERO,
    deriv,
    evaluate,
    free_symbols,
    render,
)
from .sysmodel import FlatSystem, ModelError, OdeSystem, make_system

GREEK = {
    "α": "alpha", "β": "beta", "γ": "gamma", "δ": "delta", "ε": "epsilon", "ζ": "zeta",
    "η": "eta", "θ": "theta", "κ": "kappa", "λ": "lambda", "μ": "mu", "ν": "nu",
    "ξ": "xi", "π": "pi", "ρ": "rho", "σ": "sigma", "τ": "tau", "φ": "phi",
    "χ": "chi", "ψ": "psi", "ω": "omega",
}


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"line {line}, column {column}: {message}" if line else message)


def ascii_name(name: str) -> str:
    return "".join(GREEK.get(ch, ch) for ch in name)


# -- expression parsing -----------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<rational>\(-?\d+/\d+\))
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[^\W\d][\w]*(?:\.[^\W\d][\w]*)*)
  | (?P<op>[-+*/^(),=])
    """,
    re.VERBOSE | re.UNICODE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


def tokenize(text: str, line: int = 0, col0: int = 1) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col0 + pos)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), col0 + pos))
        pos = m.end()
    toks.append(_Tok("end", "", col0 + len(text)))
    return toks


def _number(text: str) -> Const:
    if re.fullmatch(r"\d+", text):
        return Const(int(text))
    return Const(float(text))


class _ExprParser:
    def __init__(self, toks, resolve, ivar: Optional[SymbolId], line: int):
        self.toks = toks
        self.i = 0
        self.resolve = resolve
        self.ivar = ivar
        self.line = line

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return ParseError(msg, self.line, tok.col)

    def expect(self, text):
        t = self.next()
        if t.text != text:
            raise self.error(f"expected {text!r}, found {t.text or 'end of line'!r}", t)
        return t

    def parse(self) -> Expr:
        e = self.sum()
        if self.peek().kind != "end":
            raise self.error(f"unexpected {self.peek().text!r}")
        return e

    def sum(self) -> Expr:
        terms = [self.product()]
        while self.peek().text in ("+", "-"):
            op = self.next().text
            t = self.product()
            terms.append(t if op == "+" else Apply("neg", (t,)))
        return terms[0] if len(terms) == 1 else Apply("add", tuple(terms))

    def product(self) -> Expr:
        factors = [self.unary()]
        while self.peek().text in ("*", "/"):
            op = self.next().text
            f = self.unary()
            if op == "*":
                factors.append(f)
            else:
                left = factors[0] if len(factors) == 1 else Apply("mul", tuple(factors))
                factors = [Apply("div", (left, f))]
        return factors[0] if len(factors) == 1 else Apply("mul", tuple(factors))

    def unary(self) -> Expr:
        if self.peek().text == "-":
            self.next()
            nxt = self.peek()
            after = self.toks[self.i + 1] if self.i + 1 < len(self.toks) else None
            if nxt.kind == "number" and not (after is not None and after.text == "^"):
                self.next()
                return Const(-_number(nxt.text).value)
            return Apply("neg", (self.unary(),))
        if self.peek().text == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().text == "^":
            self.next()
            return Apply("pow", (base, self.unary()))
        return base

    def atom(self) -> Expr:
        t = self.next()
        if t.kind == "number":
            return _number(t.text)
        if t.kind == "rational":
            num, den = t.text[1:-1].split("/")
            if int(den) == 0:
                raise self.error("zero denominator", t)
            return Const(Fraction(int(num), int(den)))
        if t.text == "(":
            # (-2) and (-1.5) are negative literals
            if self.peek().text == "-" and self.toks[self.i + 1].kind == "number" and self.toks[self.i + 2].text == ")":
                self.next()
                c = _number(self.next().text)
                self.next()
                return Const(-c.value)
            e = self.sum()
            self.expect(")")
            return e
        if t.kind == "name":
            name = ascii_name(t.text)
            if self.peek().text == "(":
                if name == "D":
                    if self.ivar is None:
                        raise self.error("D(.) used before ivar is declared", t)
                    self.next()
                    e = self.sum()
                    self.expect(")")
                    return deriv(e, self.ivar)
                if name in FUNCTIONS:
                    self.next()
                    e = self.sum()
                    self.expect(")")
                    return Apply(name, (e,))
                raise self.error(f"unknown function {t.text!r}", t)
            sym = self.resolve(name)
            if sym is None:
                raise self.error(f"unknown symbol {t.text!r}", t)
            return Sym(sym)
        raise self.error(f"unexpected {t.text or 'end of line'!r}", t)


def parse_expr(text: str, symbols: dict[str, SymbolId], ivar: Optional[SymbolId] = None, line: int = 0) -> Expr:
    """Parse an expression; ``symbols`` maps (dotted) names to symbols."""
    return _ExprParser(tokenize(text, line), symbols.get, ivar, line).parse()


# -- model parsing ----------------------------------------------------------


@dataclass
class _Block:
    name: str
    line: int
    ivar: Optional[SymbolId] = None
    states: list = field(default_factory=list)
    params: list = field(default_factory=list)
    defaults: list = field(default_factory=list)  # (name, text, line, col)
    eqs: list = field(default_factory=list)  # (text, line, col)
    subs: list = field(default_factory=list)
    names: dict = field(default_factory=dict)


_IDENT = r"[^\W\d][\w]*(?:\.[^\W\d][\w]*)*"


def _split_symbol(name: str, kind: str, ivar: Optional[SymbolId]) -> SymbolId:
    parts = name.split(".")
    return SymbolId(parts[-1], tuple(parts[:-1]), kind, ivar if kind == STATE else None)


def parse_model(text: str) -> OdeSystem:
    """Parse model text into a (possibly hierarchical) system."""
    lines = text.splitlines()
    stack: list[_Block] = []
    root: Optional[_Block] = None
    for ln, raw in enumerate(lines, start=1):
        body = raw.split("#", 1)[0]
        stripped = body.strip()
        if not stripped:
            continue
        col = len(body) - len(body.lstrip()) + 1
        kw, _, rest = stripped.partition(" ")
        rest_col = col + len(kw) + 1 + (len(rest) - len(rest.lstrip()))
        rest = rest.strip()
        if kw == "system":
            if root is not None:
                raise ParseError("only one top-level system per document", ln, col)
            if not re.fullmatch(r"[^\W\d][\w]*", rest):
                raise ParseError("system needs a simple name", ln, rest_col)
            root = _Block(rest, ln)
            stack.append(root)
            continue
        if not stack:
            if kw == "}":
                raise ParseError("unbalanced '}'", ln, col)
            raise ParseError(f"expected 'system <name>' before {kw!r}", ln, col)
        blk = stack[-1]
        if kw == "}" and not rest:
            if len(stack) == 1:
                raise ParseError("unbalanced '}'", ln, col)
            stack.pop()
            continue
        if kw == "subsystem":
            m = re.fullmatch(r"([^\W\d][\w]*)\s*\{", rest)
            if not m:
                raise ParseError("expected 'subsystem <name> {'", ln, rest_col)
            sub = _Block(m.group(1), ln, ivar=blk.ivar)
            if any(s.name == sub.name for s in blk.subs) or sub.name in blk.names:
                raise ParseError(f"duplicate declaration of {sub.name!r}", ln, rest_col)
            blk.subs.append(sub)
            stack.append(sub)
            continue
        if kw == "ivar":
            if not re.fullmatch(r"[^\W\d][\w]*", rest):
                raise ParseError("ivar needs a simple name", ln, rest_col)
            iv = SymbolId(ascii_name(rest), (), INDEPENDENT)
            if blk.ivar is not None and blk.ivar != iv:
                raise ParseError(f"conflicting ivar {rest!r}", ln, rest_col)
            if blk.ivar is None and (blk.states or blk.eqs):
                raise ParseError("ivar must precede states and equations", ln, col)
            blk.ivar = iv
            continue
        if kw in ("param", "state"):
            if not rest:
                raise ParseError(f"{kw} needs at least one name", ln, rest_col)
            for m in re.finditer(r"\S+", rest):
                item = m.group()
                c = rest_col + m.start()
                if kw == "state":
                    sm = re.fullmatch(rf"({_IDENT})(?:\((\w+)\))?", item)
                    if not sm:
                        raise ParseError(f"bad state declaration {item!r}", ln, c)
                    if blk.ivar is None:
                        raise ParseError("state declared before ivar", ln, c)
                    if sm.group(2) is not None and ascii_name(sm.group(2)) != blk.ivar.name:
                        raise ParseError(f"state depends on unknown ivar {sm.group(2)!r}", ln, c)
                    name = ascii_name(sm.group(1))
                else:
                    if not re.fullmatch(_IDENT, item):
                        raise ParseError(f"bad parameter name {item!r}", ln, c)
                    name = ascii_name(item)
                if name in blk.names or any(s.name == name for s in blk.subs) or (blk.ivar and name == blk.ivar.name):
                    raise ParseError(f"duplicate declaration of {name!r}", ln, c)
                sym = _split_symbol(name, STATE if kw == "state" else PARAMETER, blk.ivar)
                blk.names[name] = sym
                (blk.states if kw == "state" else blk.params).append(sym)
            continue
        if kw == "default":
            m = re.fullmatch(rf"({_IDENT})\s*=\s*(.*)", rest)
            if not m or not m.group(2).strip():
                raise ParseError("expected 'default <name> = <value>'", ln, rest_col)
            blk.defaults.append((ascii_name(m.group(1)), m.group(2), ln, rest_col + m.start(2)))
            continue
        if kw in ("eq", "connect-eq"):
            if blk.ivar is None:
                raise ParseError("equation before ivar", ln, col)
            blk.eqs.append((rest, ln, rest_col))
            continue
        raise ParseError(f"unknown declaration {kw!r}", ln, col)
    if root is None:
        raise ParseError("empty document: expected 'system <name>'", len(lines) or 1, 1)
    if len(stack) > 1:
        raise ParseError(f"subsystem {stack[-1].name!r} is not closed", stack[-1].line, 1)
    return _build(root)


def _sub_lookup(sys: OdeSystem, path: list[str]) -> Optional[SymbolId]:
    head, rest = path[0], path[1:]
    if not rest:
        for s in sys.states + sys.parameters + tuple(sys.externals):
            if s.full_name == head:
                return s
        return None
    for sub in sys.subsystems:
        if sub.name == head:
            found = _sub_lookup(sub, rest)
            return found.prefixed(head) if found is not None else None
    # dotted local declaration, e.g. flattened symbol names
    for s in sys.states + sys.parameters:
        if s.full_name == ".".join(path):
            return s
    return None


def _build(blk: _Block) -> OdeSystem:
    if blk.ivar is None:
        raise ParseError(f"system {blk.name!r} has no ivar", blk.line, 1)
    subs = [_build(s) for s in blk.subs]
    shell = OdeSystem(blk.name, blk.ivar, (), tuple(blk.states), tuple(blk.params), {}, tuple(subs))

    def resolve(name: str) -> Optional[SymbolId]:
        if name in blk.names:
            return blk.names[name]
        if name == blk.ivar.name:
            return blk.ivar
        if "." in name:
            return _sub_lookup(shell, name.split("."))
        return None

    eqs = []
    for text, ln, col in blk.eqs:
        depth = 0
        split_at = None
        for k, ch in enumerate(text):
            depth += ch == "("
            depth -= ch == ")"
            if ch == "=" and depth == 0:
                if split_at is not None:
                    raise ParseError("more than one '=' in equation", ln, col + k)
                split_at = k
        if split_at is None:
            raise ParseError("equation needs '='", ln, col)
        lhs_t, rhs_t = text[:split_at], text[split_at + 1:]
        if not lhs_t.strip():
            raise ParseError("empty left-hand side", ln, col)
        if not rhs_t.strip():
            raise ParseError("empty right-hand side", ln, col + split_at + 1)
        lhs = _ExprParser(tokenize(lhs_t, ln, col), resolve, blk.ivar, ln).parse()
        rhs = _ExprParser(tokenize(rhs_t, ln, col + split_at + 1), resolve, blk.ivar, ln).parse()
        eqs.append(Equation(lhs, rhs))

    defaults = {}
    for name, text, ln, col in blk.defaults:
        sym = resolve(name)
        if sym is None or sym.kind == INDEPENDENT:
            raise ParseError(f"default for unknown symbol {name!r}", ln, col)
        e = _ExprParser(tokenize(text, ln, col), lambda n: None, None, ln).parse()
        try:
            defaults[sym] = float(evaluate(e, {}))
        except Exception as exc:
            raise ParseError(f"default value must be a constant expression ({exc})", ln, col) from None
    try:
        return make_system(blk.name, Sym(blk.ivar), eqs, blk.states, blk.params, subs, defaults)
    except ModelError as exc:
        raise ParseError(str(exc), blk.line, 1) from None


# -- rendering --------------------------------------------------------------


def _fmt_value(v: float) -> str:
    return repr(float(v))


def render_model(sys, comments: Optional[dict] = None, indent: str = "") -> str:
    """Canonical text of a system; ``comments`` maps equation index to a trailing comment."""
    out = []
    if not indent:
        out.append(f"system {sys.name}")
    out.append(f"{indent}ivar {sys.ivar.name}")
    if sys.parameters:
        out.append(f"{indent}param " + " ".join(p.full_name for p in sys.parameters))
    if sys.states:
        out.append(f"{indent}state " + " ".join(f"{s.full_name}({sys.ivar.name})" for s in sys.states))
    for s in tuple(sys.states) + tuple(sys.parameters):
        if s in sys.defaults:
            out.append(f"{indent}default {s.full_name} = {_fmt_value(sys.defaults[s])}")
    for sub in getattr(sys, "subsystems", ()):
        out.append(f"{indent}subsystem {sub.name} {{")
        out.append(render_model(sub, indent=indent + "    ").rstrip("\n"))
        out.append(f"{indent}}}")
    # parent-level defaults on component symbols
    local = set(sys.states) | set(sys.parameters)
    for k in sorted((k for k in sys.defaults if k not in local), key=lambda s: s.full_name):
        out.append(f"{indent}default {k.full_name} = {_fmt_value(sys.defaults[k])}")
    own = {s.full_name for s in local}
    for i, eq in enumerate(sys.equations):
        syms = free_symbols(eq.lhs) | free_symbols(eq.rhs)
        kw = "connect-eq" if any(s.namespace and s.full_name not in own for s in syms) else "eq"
        line = f"{indent}{kw} {render(eq.lhs)} = {render(eq.rhs)}"
        if comments and i in comments:
            line += f"  # {comments[i]}"
        out.append(line)
    return "\n".join(out) + "\n"


def load_model(path) -> OdeSystem:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())
