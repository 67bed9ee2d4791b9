"""Random expression generators shared by the property tests."""

import random

from hypothesis import strategies as st

from eqmodel.symcore import Apply, Const, Sym, cos, exp, sin


def random_expr(rng: random.Random, syms, depth: int = 3):
    """A random expression that is smooth and finite for arguments in [-2, 2]."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            v = rng.choice(syms)
            return v if isinstance(v, Sym) else Sym(v)
        return Const(rng.choice([1, 2, 3, 0.5, -1.5]))
    kind = rng.choice(["add", "mul", "neg", "sin", "cos", "exp", "pow", "div"])
    a = random_expr(rng, syms, depth - 1)
    if kind in ("add", "mul"):
        return Apply(kind, (a, random_expr(rng, syms, depth - 1)))
    if kind == "neg":
        return -a
    if kind == "sin":
        return sin(a)
    if kind == "cos":
        return cos(a)
    if kind == "exp":
        # keep magnitudes moderate
        return exp(sin(a))
    if kind == "pow":
        return Apply("pow", (a, Const(rng.choice([2, 3]))))
    b = random_expr(rng, syms, depth - 1)
    return a / (Const(2) + b * b)


def exprs(syms, depth: int = 3):
    """Hypothesis strategy wrapping :func:`random_expr`."""
    return st.integers(min_value=0, max_value=2**32 - 1).map(lambda seed: random_expr(random.Random(seed), syms, depth))
