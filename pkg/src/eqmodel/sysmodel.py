"""Equation systems, hierarchical composition and flattening."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .symcore import (
    INDEPENDENT,
    PARAMETER,
    STATE,
    Deriv,
    Equation,
    Expr,
    Sym,
    SymbolId,
    contains_deriv,
    free_symbols,
    ordered_symbols,
    substitute,
)


class ModelError(Exception):
    """Raised for ill-formed systems (bad declarations, name collisions)."""


@dataclass(frozen=True)
class ExternalOutput:
    """A time-dependent quantity computed outside the equation system.

    ``provider(param_values, t)`` returns the value; ``params`` lists the
    parameter symbols whose values it receives, in order. Used to embed
    trained surrogates as components.
    """

    provider: Callable
    params: tuple[SymbolId, ...]
    index: int = 0

    def prefixed(self, prefix: str) -> "ExternalOutput":
        return ExternalOutput(self.provider, tuple(p.prefixed(prefix) for p in self.params), self.index)


def _as_symbol(s) -> SymbolId:
    if isinstance(s, Sym):
        return s.sym
    if isinstance(s, SymbolId):
        return s
    raise TypeError(f"expected a symbol, got {s!r}")


@dataclass(frozen=True)
class OdeSystem:
    name: str
    ivar: SymbolId
    equations: tuple[Equation, ...] = ()
    states: tuple[SymbolId, ...] = ()
    parameters: tuple[SymbolId, ...] = ()
    defaults: Mapping[SymbolId, float] = field(default_factory=dict)
    subsystems: tuple["OdeSystem", ...] = ()
    externals: Mapping[SymbolId, ExternalOutput] = field(default_factory=dict)

    def __getattr__(self, item):
        # dotted access to subsystem symbols: connected.lorenz1.x
        for sub in object.__getattribute__(self, "subsystems"):
            if sub.name == item:
                return _Namespace(sub, (item,))
        for s in object.__getattribute__(self, "states") + object.__getattribute__(self, "parameters"):
            if s.name == item and not s.namespace:
                return Sym(s)
        raise AttributeError(item)

    @property
    def mass_matrix(self) -> list[int]:
        return mass_diag(self.equations)

    def all_symbols(self) -> set[SymbolId]:
        return set(self.states) | set(self.parameters) | {self.ivar}


class _Namespace:
    def __init__(self, sys: OdeSystem, path: tuple[str, ...]):
        self._sys = sys
        self._path = path

    def __getattr__(self, item):
        for sub in self._sys.subsystems:
            if sub.name == item:
                return _Namespace(sub, self._path + (item,))
        for s in self._sys.states + self._sys.parameters + tuple(self._sys.externals):
            if s.name == item and not s.namespace:
                sym = s
                for p in reversed(self._path):
                    sym = sym.prefixed(p)
                return Sym(sym)
        raise AttributeError(item)


@dataclass(frozen=True)
class FlatSystem:
    """A system with all subsystems inlined; symbols carry full namespace paths."""

    name: str
    ivar: SymbolId
    equations: tuple[Equation, ...] = ()
    states: tuple[SymbolId, ...] = ()
    parameters: tuple[SymbolId, ...] = ()
    defaults: Mapping[SymbolId, float] = field(default_factory=dict)
    externals: Mapping[SymbolId, ExternalOutput] = field(default_factory=dict)

    subsystems = ()

    @property
    def mass_matrix(self) -> list[int]:
        return mass_diag(self.equations)

    def symbol(self, full_name: str) -> SymbolId:
        for s in self.states + self.parameters + tuple(self.externals) + (self.ivar,):
            if s.full_name == full_name:
                return s
        raise KeyError(full_name)

    def replace(self, **changes) -> "FlatSystem":
        data = dict(
            name=self.name,
            ivar=self.ivar,
            equations=self.equations,
            states=self.states,
            parameters=self.parameters,
            defaults=self.defaults,
            externals=self.externals,
        )
        data.update(changes)
        data["equations"] = tuple(data["equations"])
        data["states"] = tuple(data["states"])
        data["parameters"] = tuple(data["parameters"])
        return FlatSystem(**data)


def mass_diag(equations: Sequence[Equation]) -> list[int]:
    return [1 if contains_deriv(eq.lhs) or contains_deriv(eq.rhs) else 0 for eq in equations]


def _deriv_symbols(e: Expr, out: set):
    if isinstance(e, Deriv):
        out |= free_symbols(e.arg)
        return
    for c in getattr(e, "args", ()):
        _deriv_symbols(c, out)


def make_system(
    name: str,
    ivar,
    equations: Sequence[Equation] = (),
    states: Optional[Sequence] = None,
    params: Optional[Sequence] = None,
    subsystems: Sequence[OdeSystem] = (),
    defaults: Optional[Mapping] = None,
    externals: Optional[Mapping] = None,
) -> OdeSystem:
    """Build a system, inferring local states and parameters when not given.

    Inference walks the equations in order; state-kind symbols become states,
    parameter-kind symbols become parameters. Namespaced symbols belong to
    subsystems and are left alone.
    """
    ivar = _as_symbol(ivar)
    if ivar.kind != INDEPENDENT:
        raise ModelError(f"{ivar.full_name} is not an independent variable")
    equations = tuple(equations)
    names = [s.name for s in subsystems]
    if len(set(names)) != len(names):
        raise ModelError(f"duplicate subsystem names in {name}: {names}")

    under_d: set[SymbolId] = set()
    seen: list[SymbolId] = []
    for eq in equations:
        for side in (eq.lhs, eq.rhs):
            _deriv_symbols(side, under_d)
            for s in ordered_symbols(side):
                if s not in seen:
                    seen.append(s)
    local = [s for s in seen if not s.namespace and s != ivar]
    for s in under_d:
        if s.kind != STATE:
            raise ModelError(f"{s.full_name} is differentiated but declared {s.kind}")

    if states is None:
        states_t = tuple(s for s in local if s.kind == STATE)
    else:
        states_t = tuple(_as_symbol(s) for s in states)
    if params is None:
        params_t = tuple(s for s in local if s.kind == PARAMETER)
    else:
        params_t = tuple(_as_symbol(s) for s in params)

    for s in states_t:
        if s.kind != STATE:
            raise ModelError(f"{s.full_name} listed as state but is a {s.kind}")
        if s in params_t:
            raise ModelError(f"{s.full_name} classified both as state and parameter")
    for s in params_t:
        if s.kind != PARAMETER:
            raise ModelError(f"{s.full_name} listed as parameter but is a {s.kind}")
    full = [s.full_name for s in states_t + params_t]
    if len(set(full)) != len(full):
        raise ModelError(f"duplicate symbol names in {name}")
    clash = set(full) & set(names)
    if clash:
        raise ModelError(f"symbol names collide with subsystem names: {sorted(clash)}")

    defaults_d = {_as_symbol(k): float(v) for k, v in (defaults or {}).items()}
    externals_d = {_as_symbol(k): v for k, v in (externals or {}).items()}
    if states is not None or params is not None:
        # explicit lists must cover every local symbol the equations use
        missing = [s.full_name for s in local if s not in states_t and s not in params_t and s not in externals_d]
        if missing:
            raise ModelError(f"symbols used in {name} but not declared: {missing}")
    return OdeSystem(name, ivar, equations, states_t, params_t, defaults_d, tuple(subsystems), externals_d)


def flatten(sys) -> FlatSystem:
    """Inline subsystems depth-first, parent equations first."""
    if isinstance(sys, FlatSystem):
        return sys
    equations = list(sys.equations)
    states = list(sys.states)
    params = list(sys.parameters)
    defaults = dict(sys.defaults)
    externals = dict(sys.externals)
    for sub in sys.subsystems:
        child = flatten(sub)
        mapping = {}
        for s in child.states + child.parameters + tuple(child.externals):
            mapping[s] = Sym(s.prefixed(sub.name))
        equations.extend(eq.map(lambda e: substitute(e, mapping)) for eq in child.equations)
        states.extend(s.prefixed(sub.name) for s in child.states)
        params.extend(s.prefixed(sub.name) for s in child.parameters)
        for k, v in child.defaults.items():
            # parent-level defaults override the component's own
            defaults.setdefault(k.prefixed(sub.name), v)
        for k, v in child.externals.items():
            externals[k.prefixed(sub.name)] = v.prefixed(sub.name)
    full = [s.full_name for s in states + params + list(externals)]
    dup = sorted({n for n in full if full.count(n) > 1})
    if dup:
        raise ModelError(f"name collision after flattening {sys.name}: {dup}")
    return FlatSystem(sys.name, sys.ivar, tuple(equations), tuple(states), tuple(params), defaults, externals)


@dataclass
class ValidationReport:
    n_equations: int
    n_states: int
    undeclared: list[str] = field(default_factory=list)
    unknown_defaults: list[str] = field(default_factory=list)
    missing_defaults: list[str] = field(default_factory=list)

    @property
    def is_square(self) -> bool:
        return self.n_equations == self.n_states

    @property
    def deficit(self) -> int:
        """Positive when under-determined (more unknowns than equations)."""
        return self.n_states - self.n_equations

    @property
    def ok(self) -> bool:
        return self.is_square and not self.undeclared and not self.unknown_defaults

    def messages(self) -> list[str]:
        out = []
        if self.deficit > 0:
            out.append(f"under-determined: {self.n_equations} equations for {self.n_states} states")
        elif self.deficit < 0:
            out.append(f"over-determined: {self.n_equations} equations for {self.n_states} states")
        out += [f"undeclared symbol {n}" for n in self.undeclared]
        out += [f"default for unknown symbol {n}" for n in self.unknown_defaults]
        out += [f"missing default for {n}" for n in self.missing_defaults]
        return out


def validate(sys) -> ValidationReport:
    flat = flatten(sys)
    declared = set(flat.states) | set(flat.parameters) | set(flat.externals) | {flat.ivar}
    used: list[SymbolId] = []
    for eq in flat.equations:
        for side in (eq.lhs, eq.rhs):
            for s in ordered_symbols(side):
                if s not in used:
                    used.append(s)
    report = ValidationReport(len(flat.equations), len(flat.states))
    report.undeclared = [s.full_name for s in used if s not in declared]
    known = set(flat.states) | set(flat.parameters)
    report.unknown_defaults = sorted(k.full_name for k in flat.defaults if k not in known)
    report.missing_defaults = [s.full_name for s in flat.parameters if s not in flat.defaults]
    return report
