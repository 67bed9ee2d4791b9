"""Executable right-hand sides with embedded block root finds.

A :class:`CompiledRhs` evaluates, in order, the explicit assignments, the
torn blocks level by level (optionally in parallel), and finally the
differential right-hand sides. Expressions are turned into nested closures
over a slot-indexed environment once at compile time.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .scheduler import Schedule, build_schedule
from .structural import SimplifiedSystem, TornBlock, atom_label
from .symcore import (
    Const,
    Deriv,
    EvaluationError,
    Expr,
    Sym,
    SymbolId,
    ZERO,
    atoms,
    differentiate,
    evaluate,
    simplify_basic,
    substitute,
)


class RuntimeFailure(Exception):
    pass


class NewtonError(RuntimeFailure):
    def __init__(self, block: int, residual: float, message: str = ""):
        self.block = block
        self.residual = residual
        super().__init__(message or f"Newton failed in block {block}: residual {residual:.3e}")


class SingularBlockError(NewtonError):
    pass


class PreconditionError(RuntimeFailure):
    """A parameter-only coefficient used for explicit solving is zero."""


class CompileError(RuntimeFailure):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 50
    initial_guess: str = "warm"  # "warm" reuses the last converged values, "zero" always starts at 0
    max_halvings: int = 8

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.initial_guess not in ("warm", "zero"):
            raise ValueError("initial_guess must be 'warm' or 'zero'")


# -- closure compilation ----------------------------------------------------

_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}


def compile_expr(e: Expr, slot: Mapping[Expr, int]) -> Callable:
    if isinstance(e, Const):
        v = float(e.value)
        return lambda env: v
    if isinstance(e, (Sym, Deriv)):
        try:
            i = slot[e]
        except KeyError:
            raise CompileError(f"no producer for {e}") from None
        return lambda env: env[i]
    fs = [compile_expr(a, slot) for a in e.args]
    op = e.op
    if op == "add":
        if len(fs) == 2:
            a, b = fs
            return lambda env: a(env) + b(env)

        def add(env):
            acc = fs[0](env)
            for f in fs[1:]:
                acc += f(env)
            return acc

        return add
    if op == "mul":
        if len(fs) == 2:
            a, b = fs
            return lambda env: a(env) * b(env)

        def mul(env):
            acc = fs[0](env)
            for f in fs[1:]:
                acc *= f(env)
            return acc

        return mul
    if op == "neg":
        (a,) = fs
        return lambda env: -a(env)
    if op == "div":
        a, b = fs
        return lambda env: a(env) / b(env)
    if op == "pow":
        a, b = fs
        return lambda env: a(env) ** b(env)
    f = _FUNCS[op]
    (a,) = fs
    return lambda env: f(a(env))


# -- compiled plan ----------------------------------------------------------


@dataclass
class _BlockPlan:
    index: int
    tearing_slots: list[int]
    inner: list[tuple[int, Callable]]
    residual: list[Callable]
    jac: list[list[Callable]]
    linear: Optional[tuple[Callable, Callable]] = None  # (a, b) with r = a*z + b


@dataclass
class EvalContext:
    """Mutable per-caller state: warm-start guesses and iteration counters."""

    guesses: dict = field(default_factory=dict)
    newton_iterations: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class CompiledRhs:
    """Callable ``f(u, p, t) -> du`` for a simplified system."""

    def __init__(self, s: SimplifiedSystem, sched: Optional[Schedule] = None,
                 newton: NewtonConfig = NewtonConfig(), min_parallel_blocks: int = 2):
        self.system = s
        self.schedule = sched if sched is not None else build_schedule(s)
        self.newton = newton
        self.min_parallel_blocks = min_parallel_blocks
        self.states: list[SymbolId] = s.states
        self.parameters: list[SymbolId] = list(s.parameters)
        self.ivar = s.ivar
        self.n_states = len(self.states)

        slot: dict[Expr, int] = {}

        def add_slot(a):
            if a not in slot:
                slot[a] = len(slot)
            return slot[a]

        self._state_slots = [add_slot(Sym(x)) for x in self.states]
        self._param_slots = [add_slot(Sym(q)) for q in self.parameters]
        self._t_slot = add_slot(Sym(self.ivar))
        self._externals = []
        for sym, ext in s.externals.items():
            pidx = [self.parameters.index(q) for q in ext.params]
            self._externals.append((add_slot(Sym(sym)), ext, pidx))

        self._pre = []
        for v, e in s.solved_assignments:
            f = compile_expr(e, slot)
            self._pre.append((add_slot(v), f))

        self._blocks: list[_BlockPlan] = []
        for b, blk in enumerate(s.algebraic_blocks):
            self._blocks.append(self._compile_block(b, blk, slot, add_slot))

        self._rhs = [compile_expr(e, slot) for _, e in s.differential_states]
        self._guards = [(g, compile_expr(g, slot)) for g in s.guards]
        self._n_slots = len(slot)
        self.slots = slot
        self._checked_params = None
        self._default_ctx = threading.local()
        self._pool: Optional[ThreadPoolExecutor] = None
        self._pool_lock = threading.Lock()

    # compile helpers

    def _compile_block(self, b: int, blk: TornBlock, slot, add_slot) -> _BlockPlan:
        tslots = [add_slot(v) for v in blk.tearing_vars]
        reduced = []
        for r in blk.residuals:
            for v, e in reversed(blk.inner):
                r = substitute(r, {v: e})
            reduced.append(simplify_basic(r))
        linear = None
        if len(blk.tearing_vars) == 1:
            z = blk.tearing_vars[0]
            a = differentiate(reduced[0], z)
            if z not in atoms(a):
                bexpr = simplify_basic(substitute(reduced[0], {z: ZERO}))
                linear = (compile_expr(a, slot), compile_expr(bexpr, slot))
        jac = [[compile_expr(differentiate(r, z), slot) for z in blk.tearing_vars] for r in reduced]
        res = [compile_expr(r, slot) for r in reduced]
        inner = []
        for v, e in blk.inner:
            f = compile_expr(e, slot)
            inner.append((add_slot(v), f))
        return _BlockPlan(b, tslots, inner, res, jac, linear)

    # parameter handling

    def default_parameters(self, overrides: Optional[Mapping] = None) -> np.ndarray:
        return _vector(self.parameters, self.system.defaults, overrides, "parameter")

    def default_state(self, overrides: Optional[Mapping] = None) -> np.ndarray:
        return _vector(self.states, self.system.defaults, overrides, "state", missing=0.0)

    def new_context(self) -> EvalContext:
        return EvalContext()

    def _context(self) -> EvalContext:
        ctx = getattr(self._default_ctx, "ctx", None)
        if ctx is None:
            ctx = self._default_ctx.ctx = EvalContext()
        return ctx

    def check_preconditions(self, p) -> None:
        key = tuple(float(x) for x in p)
        if key == self._checked_params:
            return
        env = [0.0] * self._n_slots
        for i, v in zip(self._param_slots, key):
            env[i] = v
        for g, f in self._guards:
            try:
                val = f(env)
            except (ZeroDivisionError, ValueError, OverflowError) as exc:
                raise PreconditionError(f"cannot evaluate coefficient {g}: {exc}") from exc
            if val == 0.0:
                raise PreconditionError(f"coefficient {g} is zero; explicit solve is undefined")
        self._checked_params = key

    # evaluation

    def _env(self, u, p, t) -> list:
        if len(u) != self.n_states:
            raise ValueError(f"expected {self.n_states} states, got {len(u)}")
        if len(p) != len(self.parameters):
            raise ValueError(f"expected {len(self.parameters)} parameters, got {len(p)}")
        self.check_preconditions(p)
        env = [0.0] * self._n_slots
        for i, v in zip(self._state_slots, u):
            env[i] = float(v)
        pvals = [float(v) for v in p]
        for i, v in zip(self._param_slots, pvals):
            env[i] = v
        env[self._t_slot] = float(t)
        for i, ext, pidx in self._externals:
            env[i] = float(ext.provider([pvals[k] for k in pidx], float(t))[ext.index])
        return env

    def _solve_algebraic(self, env, parallel: bool, ctx: EvalContext):
        try:
            for i, f in self._pre:
                env[i] = f(env)
            for level in self.schedule.levels:
                if parallel and len(level) >= self.min_parallel_blocks:
                    pool = self._get_pool()
                    futures = [pool.submit(self._solve_block, self._blocks[b], env, ctx) for b in level]
                    for fut in futures:
                        fut.result()
                else:
                    for b in level:
                        self._solve_block(self._blocks[b], env, ctx)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise EvaluationError(f"evaluation failed: {exc}") from exc

    def eval_rhs(self, u, p, t, parallel: bool = False, ctx: Optional[EvalContext] = None) -> np.ndarray:
        ctx = ctx or self._context()
        env = self._env(u, p, t)
        self._solve_algebraic(env, parallel, ctx)
        try:
            return np.array([f(env) for f in self._rhs], dtype=float)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise EvaluationError(f"evaluation failed: {exc}") from exc

    def __call__(self, u, p, t):
        return self.eval_rhs(u, p, t, parallel=self.parallel_default)

    parallel_default = False

    def with_parallel(self, parallel: bool = True) -> "CompiledRhs":
        """Return a view of this compiled RHS whose ``__call__`` runs blocks in parallel."""
        view = object.__new__(type(self))
        view.__dict__.update(self.__dict__)
        view.parallel_default = parallel
        return view

    def _get_pool(self) -> ThreadPoolExecutor:
        with self._pool_lock:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(thread_name_prefix="blocks")
            return self._pool

    def _solve_block(self, plan: _BlockPlan, env: list, ctx: EvalContext):
        n = len(plan.tearing_slots)
        if n == 0:
            for i, f in plan.inner:
                env[i] = f(env)
            return
        tol = self.newton.tol
        if plan.linear is not None:
            fa, fb = plan.linear
            a = fa(env)
            if a == 0.0 or not math.isfinite(a):
                raise SingularBlockError(plan.index, math.inf, f"block {plan.index}: zero coefficient in linear solve")
            env[plan.tearing_slots[0]] = -fb(env) / a
        else:
            self._newton(plan, env, ctx, tol)
        for i, f in plan.inner:
            env[i] = f(env)

    def _newton(self, plan: _BlockPlan, env: list, ctx: EvalContext, tol: float):
        cfg = self.newton
        slots = plan.tearing_slots
        n = len(slots)
        guess = ctx.guesses.get(plan.index) if cfg.initial_guess == "warm" else None
        z = list(guess) if guess is not None else [0.0] * n

        def residual(zv):
            for i, v in zip(slots, zv):
                env[i] = v
            return [f(env) for f in plan.residual]

        F = residual(z)
        norm = max(abs(x) for x in F)
        iters = 0
        while not norm <= tol:
            if iters >= cfg.max_iter or not math.isfinite(norm):
                raise NewtonError(plan.index, norm)
            iters += 1
            J = [[f(env) for f in row] for row in plan.jac]
            if n == 1:
                if J[0][0] == 0.0:
                    raise SingularBlockError(plan.index, norm, f"block {plan.index}: singular Jacobian")
                dz = [-F[0] / J[0][0]]
            else:
                try:
                    dz = list(np.linalg.solve(np.array(J), -np.array(F)))
                except np.linalg.LinAlgError:
                    raise SingularBlockError(plan.index, norm, f"block {plan.index}: singular Jacobian") from None
            lam = 1.0
            for _ in range(cfg.max_halvings + 1):
                trial = [zi + lam * di for zi, di in zip(z, dz)]
                Ft = residual(trial)
                nt = max(abs(x) for x in Ft)
                if nt < norm or nt <= tol:
                    break
                lam *= 0.5
            z, F, norm = trial, Ft, nt
        residual(z)
        with ctx.lock:
            ctx.guesses[plan.index] = tuple(z)
            ctx.newton_iterations += iters

    def block_residual_norms(self, u, p, t) -> list[float]:
        env = self._env(u, p, t)
        self._solve_algebraic(env, False, self._context())
        return [max((abs(f(env)) for f in plan.residual), default=0.0) for plan in self._blocks]

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def _vector(symbols, defaults, overrides, what, missing=None) -> np.ndarray:
    values = []
    over = {}
    for k, v in (overrides or {}).items():
        over[k.full_name if isinstance(k, SymbolId) else k.sym.full_name if isinstance(k, Sym) else k] = v
    for s in symbols:
        if s.full_name in over:
            values.append(float(over[s.full_name]))
        elif s in defaults:
            values.append(float(defaults[s]))
        elif missing is not None:
            values.append(missing)
        else:
            raise KeyError(f"no value for {what} {s.full_name}")
    return np.array(values, dtype=float)


def compile(s: SimplifiedSystem, sched: Optional[Schedule] = None, newton: NewtonConfig = NewtonConfig(),
            min_parallel_blocks: int = 2) -> CompiledRhs:
    return CompiledRhs(s, sched, newton, min_parallel_blocks)


def eval_rhs(c: CompiledRhs, u, p, t, parallel: bool = False) -> np.ndarray:
    return c.eval_rhs(u, p, t, parallel=parallel)


def reconstruct_observed(s: SimplifiedSystem, u, p, t, compiled: Optional[CompiledRhs] = None) -> dict:
    """Values of every eliminated or algebraically solved variable at a point."""
    c = compiled if compiled is not None else CompiledRhs(s)
    env = c._env(u, p, t)
    c._solve_algebraic(env, False, c._context())
    known = {a: env[i] for a, i in c.slots.items()}
    out: dict[SymbolId, float] = {}
    for v, _ in s.solved_assignments:
        if isinstance(v, Sym):
            out[v.sym] = known[v]
    for blk in s.algebraic_blocks:
        for v in blk.outputs():
            if isinstance(v, Sym):
                out[v.sym] = known[v]
    for sym in s.externals:
        out[sym] = known[Sym(sym)]
    lookup = {a.sym: val for a, val in known.items() if isinstance(a, Sym)}
    lookup.update({a: val for a, val in known.items() if isinstance(a, Deriv)})
    for sym, e in s.observed.items():
        out[sym] = evaluate(e, {**lookup, **{k: v for k, v in out.items()}})
    return out
