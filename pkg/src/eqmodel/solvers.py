"""Time integrators: adaptive Tsit5, fixed-step RK4 and mass-matrix implicit Euler.

Every solver takes ``rhs(u, p, t) -> du`` (a :class:`~eqmodel.runtime.CompiledRhs`
or any callable with that signature) and returns a :class:`Solution`. Numerical
failures are reported through ``Solution.status`` rather than raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .runtime import NewtonConfig, RuntimeFailure
from .symcore import EvaluationError

SUCCESS = "success"
DTMIN_UNDERFLOW = "dtmin_underflow"
MAX_STEPS = "max_steps"
NEWTON_FAILURE = "newton_failure"
NAN_DETECTED = "nan_detected"

# Tsitouras 5(4) tableau.
TSIT5_C = np.array([0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0])
TSIT5_A = np.array(
    [
        [0, 0, 0, 0, 0, 0],
        [0.161, 0, 0, 0, 0, 0],
        [-0.008480655492356989, 0.335480655492357, 0, 0, 0, 0],
        [2.897153057105493, -6.359448489975075, 4.3622954328695815, 0, 0, 0],
        [5.325864828439257, -11.748883564062828, 7.4955393428898365, -0.09249506636175525, 0, 0],
        [5.86145544294642, -12.92096931784711, 8.159367898576159, -0.071584973281401, -0.028269050394068383, 0],
        [0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742, -3.290069515436081, 2.324710524099774],
    ]
)
TSIT5_B = np.array(
    [0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742, -3.290069515436081, 2.324710524099774, 0.0]
)
# b - bhat: the embedded error estimator weights
TSIT5_BTILDE = np.array(
    [
        -0.00178001105222577714,
        -0.0008164344596567469,
        0.007880878010261995,
        -0.1447110071732629,
        0.5823571654525552,
        -0.45808210592918697,
        1.0 / 66.0,
    ]
)


@dataclass(frozen=True)
class SolverOptions:
    """Integrator settings.

    Attributes:
        abstol: Absolute tolerance.
        reltol: Relative tolerance.
        dt0: Initial step; ``None`` means ``1e-4 * (t1 - t0)``.
        dtmin: Smallest allowed step before reporting ``dtmin_underflow``.
        dtmax: Largest allowed step.
        max_steps: Attempted-step budget.
        adaptive: When false, Tsit5 takes fixed steps of ``dt0``.
        saveat: Optional extra times to land on exactly (accepted steps are
            still saved).
    """

    abstol: float = 1e-6
    reltol: float = 1e-3
    dt0: Optional[float] = None
    dtmin: float = 1e-14
    dtmax: float = math.inf
    max_steps: int = 1_000_000
    adaptive: bool = True
    saveat: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not (self.abstol > 0 and self.reltol > 0):
            raise ValueError("abstol and reltol must be positive")
        if not self.dtmin < self.dtmax:
            raise ValueError("dtmin must be smaller than dtmax")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class SolverStats:
    accepted: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    newton_iterations: int = 0

    @property
    def attempted(self) -> int:
        return self.accepted + self.rejected


@dataclass
class Solution:
    ts: np.ndarray
    us: np.ndarray
    status: str = SUCCESS
    stats: SolverStats = field(default_factory=SolverStats)
    message: str = ""
    state_names: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == SUCCESS

    @property
    def t(self) -> float:
        return float(self.ts[-1])

    @property
    def u(self) -> np.ndarray:
        return self.us[-1]

    def __len__(self) -> int:
        return len(self.ts)


def _finish(ts, us, status, stats, message="", rhs=None) -> Solution:
    names = [s.full_name for s in getattr(rhs, "states", [])]
    n = len(us[0]) if us else 0
    return Solution(np.array(ts, dtype=float), np.array(us, dtype=float).reshape(len(us), n), status, stats, message, names)


def _check_span(tspan):
    t0, t1 = float(tspan[0]), float(tspan[1])
    if not t0 <= t1:
        raise ValueError("tspan must be increasing")
    return t0, t1


def _call(rhs, u, p, t, stats) -> np.ndarray:
    stats.rhs_evals += 1
    return np.asarray(rhs(u, p, t), dtype=float)


def solve_tsit5(rhs: Callable, u0, tspan, p=(), opts: SolverOptions = SolverOptions()) -> Solution:
    """Adaptive Tsitouras 5(4) with first-same-as-last stage reuse.

    Step control: RMS error norm over ``err / (abstol + reltol * max(|u|, |u_new|))``,
    accept when the norm is at most 1, next step scaled by ``0.9 * norm^(-1/5)``
    clamped to [0.2, 5] (and to at most 1 right after a rejection).
    """
    t0, t1 = _check_span(tspan)
    u = np.array(u0, dtype=float)
    stats = SolverStats()
    ts, us = [t0], [u.copy()]
    if t1 == t0:
        return _finish(ts, us, SUCCESS, stats, rhs=rhs)
    span = t1 - t0
    h = opts.dt0 if opts.dt0 is not None else 1e-4 * span
    h = min(h, opts.dtmax)
    save = sorted(float(s) for s in (opts.saveat if opts.saveat is not None else ()) if t0 < s <= t1)
    save_i = 0
    t = t0
    A, B, C, E = TSIT5_A, TSIT5_B, TSIT5_C, TSIT5_BTILDE
    try:
        k1 = _call(rhs, u, p, t, stats)
    except (EvaluationError, RuntimeFailure, ArithmeticError) as exc:
        return _finish(ts, us, NAN_DETECTED if isinstance(exc, EvaluationError) else NEWTON_FAILURE, stats, str(exc), rhs)
    k = [k1] + [None] * 6
    last_rejected = False
    tiny = 16 * np.finfo(float).eps * max(abs(t0), abs(t1), 1.0)
    while t1 - t > tiny:
        if stats.attempted >= opts.max_steps:
            return _finish(ts, us, MAX_STEPS, stats, f"max_steps reached at t={t}", rhs)
        target = save[save_i] if save_i < len(save) else t1
        hs = h
        if t + hs >= target or target - (t + hs) < tiny:
            hs = target - t
        if opts.adaptive and hs < opts.dtmin and target - t > hs:
            return _finish(ts, us, DTMIN_UNDERFLOW, stats, f"step {hs:.3e} below dtmin at t={t}", rhs)
        try:
            for s in range(1, 7):
                us_ = u + hs * sum(A[s][j] * k[j] for j in range(s) if A[s][j] != 0.0)
                k[s] = _call(rhs, us_, p, t + C[s] * hs, stats)
        except EvaluationError as exc:
            stats.rejected += 1
            if not opts.adaptive:
                return _finish(ts, us, NAN_DETECTED, stats, str(exc), rhs)
            h = hs * 0.2
            last_rejected = True
            if h < opts.dtmin:
                return _finish(ts, us, NAN_DETECTED, stats, str(exc), rhs)
            continue
        except (RuntimeFailure, ArithmeticError) as exc:
            return _finish(ts, us, NEWTON_FAILURE, stats, str(exc), rhs)
        u_new = us_  # stage 7 node equals the 5th-order solution
        if not np.all(np.isfinite(u_new)) or not np.all(np.isfinite(k[6])):
            stats.rejected += 1
            if not opts.adaptive:
                return _finish(ts, us, NAN_DETECTED, stats, f"non-finite state at t={t + hs}", rhs)
            h = hs * 0.2
            last_rejected = True
            if h < opts.dtmin:
                return _finish(ts, us, NAN_DETECTED, stats, f"non-finite state at t={t + hs}", rhs)
            continue
        if opts.adaptive:
            err = hs * sum(E[j] * k[j] for j in range(7))
            scale = opts.abstol + opts.reltol * np.maximum(np.abs(u), np.abs(u_new))
            norm = float(np.sqrt(np.mean((err / scale) ** 2))) if len(u) else 0.0
        else:
            norm = 0.0
        if norm <= 1.0:
            t = target if hs == target - t else t + hs
            u = u_new
            k[0] = k[6]
            stats.accepted += 1
            ts.append(t)
            us.append(u.copy())
            if save_i < len(save) and t >= save[save_i]:
                save_i += 1
            if opts.adaptive:
                fac = 5.0 if norm == 0.0 else min(5.0, max(0.2, 0.9 * norm ** -0.2))
                if last_rejected:
                    fac = min(fac, 1.0)
                # a step clipped to land on a save point does not shrink the next one
                h = min(max(hs * fac, h) if hs < h else hs * fac, opts.dtmax)
            last_rejected = False
        else:
            stats.rejected += 1
            h = hs * max(0.2, 0.9 * norm ** -0.2)
            last_rejected = True
            if h < opts.dtmin:
                return _finish(ts, us, DTMIN_UNDERFLOW, stats, f"step {h:.3e} below dtmin at t={t}", rhs)
    return _finish(ts, us, SUCCESS, stats, rhs=rhs)


def solve_rk4_fixed(rhs: Callable, u0, tspan, p=(), h: float = 1e-3, save_every: int = 1) -> Solution:
    """Classical RK4 at a fixed step; the final step is shortened to hit ``tspan[1]``."""
    if not h > 0:
        raise ValueError("h must be positive")
    t0, t1 = _check_span(tspan)
    u = np.array(u0, dtype=float)
    stats = SolverStats()
    ts, us = [t0], [u.copy()]
    n = int(math.ceil((t1 - t0) / h - 1e-9)) if t1 > t0 else 0
    for i in range(n):
        t = t0 + i * h
        hs = min(h, t1 - t)
        try:
            k1 = _call(rhs, u, p, t, stats)
            k2 = _call(rhs, u + 0.5 * hs * k1, p, t + 0.5 * hs, stats)
            k3 = _call(rhs, u + 0.5 * hs * k2, p, t + 0.5 * hs, stats)
            k4 = _call(rhs, u + hs * k3, p, t + hs, stats)
        except EvaluationError as exc:
            return _finish(ts, us, NAN_DETECTED, stats, str(exc), rhs)
        except (RuntimeFailure, ArithmeticError) as exc:
            return _finish(ts, us, NEWTON_FAILURE, stats, str(exc), rhs)
        u = u + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        stats.accepted += 1
        if not np.all(np.isfinite(u)):
            ts.append(t + hs)
            us.append(u.copy())
            return _finish(ts, us, NAN_DETECTED, stats, f"non-finite state at t={t + hs}", rhs)
        if (i + 1) % save_every == 0 or i == n - 1:
            ts.append(t1 if i == n - 1 else t0 + (i + 1) * h)
            us.append(u.copy())
    return _finish(ts, us, SUCCESS, stats, rhs=rhs)


def _fd_jacobian(g: Callable, u: np.ndarray, gu: np.ndarray) -> np.ndarray:
    n = len(u)
    J = np.empty((n, n))
    for j in range(n):
        du = math.sqrt(np.finfo(float).eps) * max(1.0, abs(u[j]))
        up = u.copy()
        up[j] += du
        J[:, j] = (g(up) - gu) / du
    return J


def solve_implicit_euler_mass_matrix(
    f: Callable,
    mass_diag: Sequence[int],
    u0,
    tspan,
    p=(),
    h: float = 1e-3,
    newton: NewtonConfig = NewtonConfig(),
) -> Solution:
    """Implicit Euler for ``M u' = f(u, p, t)`` with diagonal 0/1 mass matrix.

    Each step solves ``M (u1 - u0) / h - f(u1) = 0`` by Newton with a
    finite-difference Jacobian, converged to ``newton.tol`` in the max norm.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    t0, t1 = _check_span(tspan)
    M = np.array(mass_diag, dtype=float)
    u = np.array(u0, dtype=float)
    if len(M) != len(u):
        raise ValueError("mass_diag length must match the state")
    stats = SolverStats()
    ts, us = [t0], [u.copy()]
    n = int(math.ceil((t1 - t0) / h - 1e-9)) if t1 > t0 else 0
    for i in range(n):
        t = t0 + i * h
        hs = min(h, t1 - t)
        tn = t + hs
        u_prev = u

        def g(v):
            stats.rhs_evals += 1
            return M * (v - u_prev) / hs - np.asarray(f(v, p, tn), dtype=float)

        v = u_prev.copy()
        try:
            gv = g(v)
            converged = False
            for it in range(newton.max_iter):
                if np.max(np.abs(gv), initial=0.0) <= newton.tol:
                    converged = True
                    break
                J = _fd_jacobian(g, v, gv)
                if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
                    return _finish(ts, us, NEWTON_FAILURE, stats, f"singular iteration matrix at step {i} (t={tn})")
                v = v - np.linalg.solve(J, gv)
                gv = g(v)
                stats.newton_iterations += 1
                if not np.all(np.isfinite(gv)):
                    break
            else:
                converged = np.max(np.abs(gv), initial=0.0) <= newton.tol
        except (ArithmeticError, EvaluationError, np.linalg.LinAlgError) as exc:
            return _finish(ts, us, NEWTON_FAILURE, stats, f"step {i} (t={tn}): {exc}")
        if not converged:
            stats.rejected += 1
            return _finish(ts, us, NEWTON_FAILURE, stats, f"Newton did not converge at step {i} (t={tn})")
        u = v
        stats.accepted += 1
        ts.append(tn)
        us.append(u.copy())
    return _finish(ts, us, SUCCESS, stats)


def residual_form(sys) -> tuple[Callable, list[int], list]:
    """Mass-matrix form of a first-order flat system with one equation per state.

    Equation ``i`` must either be ``D(s_i) = rhs`` (differential, mass 1) or
    an algebraic equation ``0 = g`` (mass 0). Returns ``(f, mass_diag, states)``
    where ``f(u, p, t)`` evaluates the right-hand sides in state order.
    """
    from .structural import StructuralError
    from .sysmodel import flatten
    from .symcore import Deriv, Sym, evaluate, simplify_basic

    flat = flatten(sys)
    states = list(flat.states)
    params = list(flat.parameters)
    diff: dict = {}
    alg: list = []
    for eq in flat.equations:
        lhs = eq.lhs
        if isinstance(lhs, Deriv) and lhs.order == 1 and isinstance(lhs.arg, Sym):
            diff[lhs.arg.sym] = eq.rhs
        else:
            alg.append(simplify_basic(eq.residual))
    rows = []
    mass = []
    alg_iter = iter(alg)
    for s in states:
        if s in diff:
            rows.append(diff[s])
            mass.append(1)
        else:
            try:
                rows.append(next(alg_iter))
            except StopIteration:
                raise StructuralError(f"no equation left for algebraic state {s.full_name}") from None
            mass.append(0)
    if next(alg_iter, None) is not None or len(rows) != len(flat.equations):
        raise StructuralError("system is not in one-equation-per-state mass-matrix form")

    def f(u, p, t):
        env = {s: float(v) for s, v in zip(states, u)}
        env.update({q: float(v) for q, v in zip(params, p)})
        env[flat.ivar] = float(t)
        return np.array([evaluate(r, env) for r in rows], dtype=float)

    return f, mass, states
