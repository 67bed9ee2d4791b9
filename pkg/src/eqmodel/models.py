"""Reference models used by tests, scripts and the CLI."""

from __future__ import annotations

from .symcore import Differential, Equation, exp, independent, parameters, variables
from .sysmodel import OdeSystem, make_system


def lorenz(name: str = "lorenz") -> OdeSystem:
    t = independent("t")
    x, y, z = variables("x y z", t)
    sigma, rho, beta = parameters("sigma rho beta")
    D = Differential(t)
    eqs = [
        Equation(D(x), sigma * (y - x)),
        Equation(D(y), x * (rho - z) - y),
        Equation(D(z), x * y - beta * z),
    ]
    defaults = {x: 1.0, y: 0.0, z: 0.0, sigma: 10.0, rho: 28.0, beta: 8 / 3}
    return make_system(name, t, eqs, defaults=defaults)


def connected_lorenz(gamma: float = 2.0) -> OdeSystem:
    """Two Lorenz systems tied by an implicitly defined algebraic variable ``a``."""
    l1 = lorenz("lorenz1")
    l2 = lorenz("lorenz2")
    t = independent("t")
    (a,) = variables("a", t)
    (g,) = parameters("gamma")
    # lorenz2 starts from y = 1
    l2 = make_system(
        "lorenz2", t, l2.equations, l2.states, l2.parameters,
        defaults={**l2.defaults, l2.states[0]: 0.0, l2.states[1]: 1.0},
    )
    probe = make_system("connected", t, [], [a], [g], subsystems=[l1, l2])
    conn = [Equation(0, probe.lorenz1.x + probe.lorenz2.y + a * g)]
    return make_system("connected", t, conn, [a], [g], subsystems=[l1, l2], defaults={a: 2.0, g: gamma})


def pendulum(name: str = "pendulum") -> OdeSystem:
    """Cartesian pendulum: an index-3 DAE in ``x, vx, y, vy`` and tension ``T``."""
    t = independent("t")
    x, vx, y, vy, T = variables("x vx y vy T", t)
    g, L = parameters("g L")
    D = Differential(t)
    eqs = [
        Equation(D(x), vx),
        Equation(D(vx), T * x),
        Equation(D(y), vy),
        Equation(D(vy), T * y - g),
        Equation(0, x**2 + y**2 - L**2),
    ]
    defaults = {x: 1.0, vx: 0.0, y: 0.0, vy: 0.0, T: 0.0, g: 9.8, L: 1.0}
    return make_system(name, t, eqs, [x, vx, y, vy, T], [g, L], defaults=defaults)


def pendulum_program(du, u, p, t):
    x, dx, y, dy, T = u
    g, L = p
    du[0] = dx
    du[1] = T * x
    du[2] = dy
    du[3] = T * y - g
    du[4] = x**2 + y**2 - L**2


def rc_circuit(name: str) -> OdeSystem:
    """One RC loop; its resistance equation lives in the parent (shared ambient temperature)."""
    t = independent("t")
    v, iC, iR, R, vR, vg = variables("v iC iR R vR vg", t)
    C, Vs = parameters("C Vs")
    D = Differential(t)
    eqs = [
        Equation(C * D(v), iC),
        Equation(0, iC - iR),
        Equation(0, vR - (Vs - v + vg)),
        Equation(0, iR * R - vR),
        Equation(0, vg),
    ]
    defaults = {v: 0.0, iC: 0.0, iR: 0.0, R: 1.0, vR: 0.0, vg: 0.0, C: 1.0, Vs: 1.0}
    return make_system(name, t, eqs, [v, iC, iR, R, vR, vg], [C, Vs], defaults=defaults)


def rc_circuits(n: int = 50, name: str = "rc") -> OdeSystem:
    """``n`` independent RC circuits whose resistance depends nonlinearly on
    a shared ambient temperature and on self-heating by the current."""
    t = independent("t")
    Tamb, Tref, alpha, k = parameters("Tamb Tref alpha k")
    subs = []
    for i in range(1, n + 1):
        c = rc_circuit(f"c{i}")
        # vary capacitance and source so circuits are distinguishable
        c = make_system(
            c.name, t, c.equations, c.states, c.parameters,
            defaults={**c.defaults, c.parameters[0]: 1.0 + 0.01 * i, c.parameters[1]: 1.0 + 0.1 * (i % 5)},
        )
        subs.append(c)
    probe = make_system(name, t, [], [], [Tamb, Tref, alpha, k], subsystems=subs)
    eqs = []
    for i in range(1, n + 1):
        ns = getattr(probe, f"c{i}")
        eqs.append(Equation(0, ns.R - exp(alpha * (Tamb - Tref)) - k * ns.iR**2))
    defaults = {Tamb: 300.0, Tref: 293.15, alpha: 0.004, k: 0.1}
    return make_system(name, t, eqs, [], [Tamb, Tref, alpha, k], subsystems=subs, defaults=defaults)


def stiff3(name: str = "stiff3") -> OdeSystem:
    """Fast/slow coupled decays with an algebraically derived output ``y``."""
    t = independent("t")
    f, s, y = variables("f s y", t)
    (k,) = parameters("k")
    D = Differential(t)
    eqs = [
        Equation(D(f), -k * (f - s)),
        Equation(D(s), -0.5 * s + 0.1 * f),
        Equation(0, y - (f + 2 * s)),
    ]
    defaults = {f: 1.0, s: 0.5, y: 2.0, k: 10.0}
    return make_system(name, t, eqs, [f, s, y], [k], defaults=defaults)
