"""Structural transformations on flattened equation systems.

The pipeline works on the bipartite equation/variable graph: incidence,
maximum matching, Pantelides index reduction, alias elimination, BLT sorting
and greedy tearing. Each pass is a pure function returning a new system.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .symcore import (
    INDEPENDENT,
    PARAMETER,
    STATE,
    ZERO,
    Apply,
    Const,
    Deriv,
    Equation,
    Expr,
    Sym,
    SymbolId,
    _split_coeff,
    atoms,
    contains_deriv,
    count_occurrences,
    differentiate,
    free_symbols,
    jacobian,
    simplify_basic,
    substitute,
    trace,
)
from .sysmodel import ExternalOutput, FlatSystem, flatten

log = logging.getLogger(__name__)

DEFAULT_MAX_DIFF = 8


class StructuralError(Exception):
    pass


class SingularSystemError(StructuralError):
    """No perfect matching exists (or index reduction gave up)."""


class InconsistentSystemError(StructuralError):
    """An equation simplified to ``0 = c`` with ``c != 0``."""


# -- atoms ------------------------------------------------------------------


def var_atom(sym: SymbolId, order: int, ivar: SymbolId) -> Expr:
    return Sym(sym) if order == 0 else Deriv(Sym(sym), ivar, order)


def atom_label(a: Expr) -> tuple[SymbolId, int]:
    if isinstance(a, Sym):
        return a.sym, 0
    if isinstance(a, Deriv) and isinstance(a.arg, Sym):
        return a.arg.sym, a.order
    raise ValueError(f"not a variable atom: {a!r}")


def _state_atoms(e: Expr, states: set) -> list[tuple[SymbolId, int]]:
    out = []
    for a in atoms(e):
        try:
            s, k = atom_label(a)
        except ValueError:
            continue
        if s in states:
            out.append((s, k))
    return out


# -- incidence and matching -------------------------------------------------


@dataclass(frozen=True)
class IncidenceStructure:
    n_eqs: int
    n_vars: int
    incidence: tuple[frozenset, ...]
    var_labels: tuple[tuple[SymbolId, int], ...]
    eq_labels: tuple[tuple[int, int], ...]
    ivar: Optional[SymbolId] = None

    def var_atom(self, j: int) -> Expr:
        s, k = self.var_labels[j]
        return var_atom(s, k, self.ivar)

    def highest_columns(self) -> set[int]:
        top: dict[SymbolId, int] = {}
        for s, k in self.var_labels:
            top[s] = max(top.get(s, 0), k)
        return {j for j, (s, k) in enumerate(self.var_labels) if top[s] == k}

    def n_marks(self) -> int:
        return sum(len(r) for r in self.incidence)


def _highest_orders(residuals: Sequence[Expr], states: Sequence[SymbolId]) -> dict[SymbolId, int]:
    sset = set(states)
    top = {s: 0 for s in states}
    for r in residuals:
        for s, k in _state_atoms(r, sset):
            if k > top[s]:
                top[s] = k
    return top


def _incidence_from(residuals, states, ivar, highest_only, eq_labels=None) -> IncidenceStructure:
    top = _highest_orders(residuals, states)
    labels: list[tuple[SymbolId, int]] = []
    for s in states:
        if highest_only:
            labels.append((s, top[s]))
        else:
            labels.extend((s, k) for k in range(top[s] + 1))
    index = {lab: j for j, lab in enumerate(labels)}
    sset = set(states)
    rows = []
    for r in residuals:
        row = set()
        for lab in _state_atoms(r, sset):
            j = index.get(lab)
            if j is not None:
                row.add(j)
        rows.append(frozenset(row))
    if eq_labels is None:
        eq_labels = [(i, 0) for i in range(len(residuals))]
    return IncidenceStructure(len(residuals), len(labels), tuple(rows), tuple(labels), tuple(eq_labels), ivar)


def build_incidence(sys, highest_order_only: bool = True) -> IncidenceStructure:
    """Equation/variable incidence of a flat system.

    In highest-order mode each state contributes one column at its highest
    derivative order (the Pantelides association graph). Otherwise every
    (state, order) pair present gets a column.
    """
    flat = flatten(sys)
    residuals = [simplify_basic(eq.residual) for eq in flat.equations]
    return _incidence_from(residuals, flat.states, flat.ivar, highest_order_only)


@dataclass
class Matching:
    eq_to_var: list
    var_to_eq: list

    @property
    def cardinality(self) -> int:
        return sum(v is not None for v in self.eq_to_var)

    def is_perfect(self) -> bool:
        return (
            len(self.eq_to_var) == len(self.var_to_eq)
            and all(v is not None for v in self.eq_to_var)
        )


def _augment(i, adj, var_to_eq, eq_to_var, vis_e, vis_v) -> bool:
    vis_e.add(i)
    for j in adj[i]:
        if j not in vis_v and var_to_eq[j] is None:
            vis_v.add(j)
            var_to_eq[j] = i
            eq_to_var[i] = j
            return True
    for j in adj[i]:
        if j in vis_v:
            continue
        vis_v.add(j)
        k = var_to_eq[j]
        if _augment(k, adj, var_to_eq, eq_to_var, vis_e, vis_v):
            var_to_eq[j] = i
            eq_to_var[i] = j
            return True
    return False


def maximal_matching(g: IncidenceStructure, restrict_to_highest: bool = False) -> Matching:
    """Maximum-cardinality matching by augmenting paths.

    Equations are processed in ascending order and variables tried in
    ascending order, so the result is deterministic.
    """
    allowed = g.highest_columns() if restrict_to_highest else None
    adj = []
    for row in g.incidence:
        cols = sorted(row if allowed is None else row & allowed)
        adj.append(cols)
    eq_to_var: list = [None] * g.n_eqs
    var_to_eq: list = [None] * g.n_vars
    for i in range(g.n_eqs):
        _augment(i, adj, var_to_eq, eq_to_var, set(), set())
    return Matching(eq_to_var, var_to_eq)


# -- explicit solving -------------------------------------------------------


def linear_coefficients(residual: Expr, atom: Expr):
    """Return ``(a, b)`` with ``residual == a*atom + b`` when it is affine in ``atom``."""
    a = differentiate(residual, atom)
    if atom in atoms(a):
        return None
    b = simplify_basic(substitute(residual, {atom: ZERO}))
    return a, b


def _solve_with(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const):
        return simplify_basic(Apply("mul", (Const(-1 / a.value), b)))
    return simplify_basic(Apply("div", (Apply("neg", (b,)), a)))


def solve_explicit(residual: Expr, atom: Expr, parameters: set):
    """Solve ``0 = residual`` for ``atom`` by rearrangement, if allowed.

    The atom must occur exactly once, linearly, with a coefficient that is a
    nonzero constant or depends on parameters only. Returns ``(expr, guard)``
    where ``guard`` is the coefficient that must be nonzero at runtime (or
    ``None``), or ``None`` when not explicitly solvable.
    """
    if count_occurrences(residual, atom) != 1:
        return None
    lin = linear_coefficients(residual, atom)
    if lin is None:
        return None
    a, b = lin
    if isinstance(a, Const):
        if a.value == 0:
            return None
        return _solve_with(a, b), None
    if contains_deriv(a) or not free_symbols(a) <= parameters:
        return None
    return _solve_with(a, b), a


# -- Pantelides -------------------------------------------------------------


def _explicit_definition(r: Expr, states: set):
    """``(s, f)`` if ``0 = r`` reads ``D(s) = f`` with ``f`` free of derivatives."""
    ders = [a for a in atoms(r) if isinstance(a, Deriv)]
    if len(ders) != 1:
        return None
    d = ders[0]
    if d.order != 1 or not isinstance(d.arg, Sym) or d.arg.sym not in states:
        return None
    if count_occurrences(r, d) != 1:
        return None
    lin = linear_coefficients(r, d)
    if lin is None or not isinstance(lin[0], Const) or lin[0].value == 0:
        return None
    f = _solve_with(*lin)
    if contains_deriv(f):
        return None
    return d.arg.sym, f


def _expand_defs(e: Expr, defs: Mapping[SymbolId, Expr], ivar: SymbolId) -> Expr:
    for _ in range(64):
        bindings = {}
        for a in atoms(e):
            if isinstance(a, Deriv) and isinstance(a.arg, Sym) and a.arg.sym in defs:
                val = defs[a.arg.sym]
                for _k in range(a.order - 1):
                    val = differentiate(val, ivar)
                bindings[a] = val
        if not bindings:
            return e
        e = simplify_basic(substitute(e, bindings))
    raise StructuralError("derivative substitution did not terminate")


def _chain_name(base: SymbolId, j: int, taken: set) -> SymbolId:
    name = f"{base.name}_{'t' * j}"
    while ".".join(base.namespace + (name,)) in taken:
        name += "_"
    return SymbolId(name, base.namespace, STATE, base.dependency)


def first_order_form(sys) -> FlatSystem:
    """Replace derivatives of order > 1 by chains of fresh first-order states."""
    flat = flatten(sys)
    residuals = [simplify_basic(eq.residual) for eq in flat.equations]
    top = _highest_orders(residuals, flat.states)
    high = [s for s in flat.states if top[s] >= 2]
    if not high:
        return flat
    ivar = flat.ivar
    taken = {s.full_name for s in flat.states + flat.parameters}
    bindings = {}
    new_states = list(flat.states)
    new_eqs = []
    for s in high:
        chain = [s]
        for j in range(1, top[s]):
            c = _chain_name(s, j, taken)
            taken.add(c.full_name)
            chain.append(c)
            new_states.append(c)
            new_eqs.append(Equation(Deriv(Sym(chain[j - 1]), ivar, 1), Sym(c)))
        for j in range(2, top[s] + 1):
            bindings[Deriv(Sym(s), ivar, j)] = Deriv(Sym(chain[j - 1]), ivar, 1)
    eqs = [eq.map(lambda e: substitute(e, bindings)) for eq in flat.equations]
    return flat.replace(equations=eqs + new_eqs, states=new_states)


def pantelides(sys, max_diff: int = DEFAULT_MAX_DIFF):
    """Structural index reduction.

    Equations that cannot be matched to a highest-order derivative are
    differentiated together with the equations on their alternating path,
    until the highest-order graph has a perfect matching. Explicit first-order
    definitions ``D(s) = f`` are used to eliminate ``D(s)`` from the
    differentiated equations, so only the constraint chain itself gets
    differentiated. Each equation is replaced by its highest derivative; the
    result is made first order.

    Returns ``(system, diff_counts)`` with one count per input equation.
    """
    flat = flatten(sys)
    n = len(flat.equations)
    if n != len(flat.states):
        raise SingularSystemError(f"system is not square: {n} equations, {len(flat.states)} states")
    ivar = flat.ivar
    sset = set(flat.states)
    residuals = [simplify_basic(eq.residual) for eq in flat.equations]
    counts = [0] * n
    defs: dict[SymbolId, tuple[int, Expr]] = {}
    for i, r in enumerate(residuals):
        d = _explicit_definition(r, sset)
        if d is not None and d[0] not in defs:
            defs[d[0]] = (i, d[1])

    while True:
        g = _incidence_from(residuals, flat.states, ivar, True)
        adj = [sorted(row) for row in g.incidence]
        eq_to_var: list = [None] * g.n_eqs
        var_to_eq: list = [None] * g.n_vars
        failed = None
        for i in range(n):
            vis_e: set = set()
            vis_v: set = set()
            if not _augment(i, adj, var_to_eq, eq_to_var, vis_e, vis_v):
                failed = vis_e
                break
        if failed is None:
            break
        for j in sorted(failed):
            if counts[j] >= max_diff:
                names = [str(flat.equations[k]) for k in sorted(failed)]
                raise SingularSystemError(
                    f"index reduction exceeded {max_diff} differentiations; unmatched equations: {names}"
                )
        for s in [s for s, (k, _f) in defs.items() if k in failed]:
            del defs[s]
        active = {s: f for s, (_k, f) in defs.items()}
        for j in sorted(failed):
            residuals[j] = _expand_defs(differentiate(residuals[j], ivar), active, ivar)
            counts[j] += 1
            log.debug("differentiated equation %d (count %d)", j, counts[j])

    eqs = []
    for i, eq in enumerate(flat.equations):
        if counts[i] == 0:
            eqs.append(eq)
        else:
            eqs.append(Equation(ZERO, simplify_basic(Apply("neg", (residuals[i],)))))
    return first_order_form(flat.replace(equations=eqs)), counts


def dae_index_lowering(sys, max_diff: int = DEFAULT_MAX_DIFF) -> FlatSystem:
    return pantelides(sys, max_diff)[0]


# -- alias elimination ------------------------------------------------------


def _differentiated_symbols(equations) -> set[SymbolId]:
    out = set()
    for eq in equations:
        for side in (eq.lhs, eq.rhs):
            for a in atoms(side):
                if isinstance(a, Deriv):
                    out |= free_symbols(a.arg)
    return out


def _alias_candidate(r: Expr, states: Sequence[SymbolId], dstates: set):
    terms = r.args if isinstance(r, Apply) and r.op == "add" else (r,)
    syms = []
    for t in terms:
        c, base = _split_coeff(t)
        if base is None:
            continue
        if not isinstance(base, Sym) or base.sym not in states or abs(c) != 1:
            return None
        syms.append((base.sym, c))
    if not 1 <= len(syms) <= 2:
        return None
    if len(syms) == 2 and syms[0][0] == syms[1][0]:
        return None
    order = {s: i for i, s in enumerate(states)}
    choices = [(s, c) for s, c in syms if s not in dstates]
    if not choices:
        return None
    v, c = max(choices, key=lambda sc: order[sc[0]])
    rest = simplify_basic(Apply("add", (r, Apply("neg", (Apply("mul", (Const(c), Sym(v))),)))))
    expr = simplify_basic(Apply("neg", (rest,))) if c == 1 else rest
    return v, expr


def alias_elimination(sys):
    """Drop ``0 = 0`` equations and eliminate trivial aliases.

    Equations of the shape ``v = ±w + c`` or ``v = c`` remove ``v`` by
    substitution; eliminated symbols are returned in ``observed``. Only
    variables that never appear differentiated are eliminated.
    """
    flat = flatten(sys)
    eqs: dict[int, Equation] = dict(enumerate(flat.equations))
    res = {i: simplify_basic(eq.residual) for i, eq in eqs.items()}
    states = list(flat.states)
    defaults = dict(flat.defaults)
    observed: dict[SymbolId, Expr] = {}
    dstates = _differentiated_symbols(flat.equations)
    users: dict[SymbolId, set] = {}
    for i, r in res.items():
        for s in free_symbols(r):
            users.setdefault(s, set()).add(i)

    def check(i):
        r = res[i]
        if isinstance(r, Const):
            if r.value != 0:
                raise InconsistentSystemError(f"equation {eqs[i]} reduces to 0 = {r.value}")
            del eqs[i], res[i]
            return True
        return False

    for i in list(eqs):
        check(i)
    pending = sorted(eqs)
    while pending:
        i = pending.pop(0)
        if i not in eqs:
            continue
        cand = _alias_candidate(res[i], states, dstates)
        if cand is None:
            continue
        v, expr = cand
        binding = {v: expr}
        del eqs[i], res[i]
        touched = sorted(k for k in users.get(v, ()) if k in eqs)
        for k in touched:
            eqs[k] = eqs[k].map(lambda x: simplify_basic(substitute(x, binding)))
            res[k] = simplify_basic(substitute(res[k], binding))
            for s in free_symbols(res[k]):
                users.setdefault(s, set()).add(k)
            if not check(k) and k not in pending:
                pending.append(k)
        pending.sort()
        observed = {k: simplify_basic(substitute(val, binding)) for k, val in observed.items()}
        observed[v] = expr
        states.remove(v)
        defaults.pop(v, None)
    out = [eqs[i] for i in sorted(eqs)]
    return flat.replace(equations=out, states=states, defaults=defaults), observed


# -- BLT --------------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    eqs: tuple[int, ...]
    vars: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.eqs)


@dataclass(frozen=True)
class BltDecomposition:
    blocks: tuple[Block, ...]
    block_deps: frozenset
    incidence: IncidenceStructure
    matching: Matching = field(compare=False)

    def equation_order(self) -> list[int]:
        return [e for b in self.blocks for e in b.eqs]

    def variable_order(self) -> list[int]:
        return [v for b in self.blocks for v in b.vars]


def _tarjan(succ: list[list[int]]) -> list[list[int]]:
    n = len(succ)
    index = [None] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] is not None:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            if pos < len(succ[v]):
                work[-1] = (v, pos + 1)
                w = succ[v][pos]
                if index[w] is None:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
            else:
                work.pop()
                if work:
                    u = work[-1][0]
                    low[u] = min(low[u], low[v])
                if low[v] == index[v]:
                    comp = []
                    while True:
                        w = stack.pop()
                        on_stack[w] = False
                        comp.append(w)
                        if w == v:
                            break
                    comps.append(sorted(comp))
    return comps


def blt_sort(g: IncidenceStructure, m: Matching) -> BltDecomposition:
    """Strongly connected components of the matched dependency graph in topological order."""
    if not m.is_perfect() or g.n_eqs != g.n_vars:
        raise SingularSystemError("BLT sorting needs a perfect matching")
    n = g.n_eqs
    readers: dict[int, list[int]] = {}
    for j, row in enumerate(g.incidence):
        for v in row:
            readers.setdefault(v, []).append(j)
    succ = [sorted({j for j in readers.get(m.eq_to_var[i], []) if j != i}) for i in range(n)]
    comps = _tarjan(succ)
    comp_of = [0] * n
    for c, comp in enumerate(comps):
        for i in comp:
            comp_of[i] = c
    edges = set()
    for i in range(n):
        for j in succ[i]:
            if comp_of[i] != comp_of[j]:
                edges.add((comp_of[i], comp_of[j]))
    indeg = [0] * len(comps)
    out: dict[int, list[int]] = {}
    for a, b in edges:
        indeg[b] += 1
        out.setdefault(a, []).append(b)
    heap = [(comps[c][0], c) for c in range(len(comps)) if indeg[c] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, c = heapq.heappop(heap)
        order.append(c)
        for d in out.get(c, []):
            indeg[d] -= 1
            if indeg[d] == 0:
                heapq.heappush(heap, (comps[d][0], d))
    position = {c: k for k, c in enumerate(order)}
    blocks = tuple(Block(tuple(comps[c]), tuple(m.eq_to_var[i] for i in comps[c])) for c in order)
    deps = frozenset((position[a], position[b]) for a, b in edges)
    return BltDecomposition(blocks, deps, g, m)


# -- tearing ----------------------------------------------------------------


@dataclass(frozen=True)
class TornBlock:
    """An algebraic block solved by a nonlinear root find.

    ``inner`` assignments are evaluated in order once the tearing variables
    are known; the ``residuals`` must then vanish.
    """

    tearing_vars: tuple[Expr, ...]
    residuals: tuple[Expr, ...]
    inner: tuple[tuple[Expr, Expr], ...]
    equations: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return len(self.tearing_vars)

    def outputs(self) -> list[Expr]:
        return list(self.tearing_vars) + [v for v, _ in self.inner]


@dataclass
class SimplifiedSystem:
    """Result of structural simplification, ready for compilation."""

    ivar: SymbolId
    differential_states: list[tuple[SymbolId, Expr]]
    solved_assignments: list[tuple[Expr, Expr]]
    algebraic_blocks: list[TornBlock]
    observed: dict[SymbolId, Expr]
    parameters: tuple[SymbolId, ...]
    defaults: dict
    provenance: FlatSystem
    guards: list[Expr] = field(default_factory=list)
    externals: Mapping[SymbolId, ExternalOutput] = field(default_factory=dict)
    blt: Optional[BltDecomposition] = None
    reduced: Optional[FlatSystem] = None

    @property
    def states(self) -> list[SymbolId]:
        return [s for s, _ in self.differential_states]

    def block_sizes(self) -> list[int]:
        return [b.size for b in self.algebraic_blocks]

    def observables(self) -> dict:
        """Every reconstructible non-state quantity keyed by full name."""
        out = {}
        for v, e in self.solved_assignments:
            out[_atom_name(v)] = e
        for b in self.algebraic_blocks:
            for v in b.tearing_vars:
                out[_atom_name(v)] = v
            for v, e in b.inner:
                out[_atom_name(v)] = e
        for s, e in self.observed.items():
            out[s.full_name] = e
        for s in self.externals:
            out[s.full_name] = Sym(s)
        return out

    def summary(self) -> dict:
        return {
            "differential_states": len(self.differential_states),
            "solved": len(self.solved_assignments),
            "torn_blocks": len(self.algebraic_blocks),
            "block_sizes": self.block_sizes(),
            "tearing_variables": sum(self.block_sizes()),
            "observed": len(self.observed),
        }


def _atom_name(a: Expr) -> str:
    s, k = atom_label(a)
    return s.full_name if k == 0 else f"D{'' if k == 1 else k}({s.full_name})"


def _tear_block(residuals: Sequence[Expr], eq_ids: Sequence[int], var_atoms: Sequence[Expr], params: set):
    unknown = list(var_atoms)
    remaining = list(eq_ids)
    inc = {i: atoms(residuals[i]) for i in eq_ids}
    inner = []
    tearing = []
    guards = []

    def solvable(i, known_extra=None):
        unk = [v for v in unknown if v in inc[i] and v != known_extra]
        if len(unk) != 1:
            return None
        sol = solve_explicit(residuals[i], unk[0], params)
        return (unk[0], sol) if sol is not None else None

    while unknown:
        for i in remaining:
            hit = solvable(i)
            if hit is not None:
                v, (expr, guard) = hit
                inner.append((v, expr))
                if guard is not None:
                    guards.append(guard)
                unknown.remove(v)
                remaining.remove(i)
                break
        else:
            scores = []
            for v in unknown:
                score = sum(1 for i in remaining if solvable(i, known_extra=v) is not None)
                scores.append(score)
            best = max(range(len(unknown)), key=lambda k: (scores[k], -k))
            tearing.append(unknown.pop(best))
    return tearing, [residuals[i] for i in remaining], inner, guards


def tearing(sys, blt: BltDecomposition, observed: Optional[Mapping] = None) -> SimplifiedSystem:
    """Causalize BLT blocks into explicit assignments and torn root-find blocks."""
    flat = flatten(sys)
    g = blt.incidence
    residuals = [simplify_basic(eq.residual) for eq in flat.equations]
    params = set(flat.parameters)
    state_order = {s: i for i, s in enumerate(flat.states)}

    diff_rhs: dict[SymbolId, Expr] = {}
    pre: list[tuple[Expr, Expr]] = []
    blocks: list[TornBlock] = []
    guards: list[Expr] = []
    block_outputs: set[Expr] = set()
    explicit_derivs: dict[Expr, Expr] = {}

    for blk in blt.blocks:
        if explicit_derivs:
            for i in blk.eqs:
                residuals[i] = simplify_basic(substitute(residuals[i], explicit_derivs))
        vars_ = [g.var_atom(j) for j in blk.vars]
        tear, res, inner, gds = _tear_block(residuals, blk.eqs, vars_, params)
        guards.extend(gds)
        if not tear:
            for v, expr in inner:
                s, k = atom_label(v)
                if k == 1:
                    diff_rhs[s] = expr
                    explicit_derivs[v] = expr
                    if atoms(expr) & block_outputs:
                        block_outputs.add(v)
                elif atoms(expr) & block_outputs:
                    blocks.append(TornBlock((), (), ((v, expr),), blk.eqs))
                    block_outputs.add(v)
                else:
                    pre.append((v, expr))
            continue
        for v in tear + [v for v, _ in inner]:
            s, k = atom_label(v)
            if k == 1:
                diff_rhs[s] = v
            block_outputs.add(v)
        blocks.append(TornBlock(tuple(tear), tuple(res), tuple(inner), blk.eqs))

    differential = []
    for s in flat.states:
        if s in diff_rhs:
            differential.append((s, diff_rhs[s]))
    differential.sort(key=lambda p: state_order[p[0]])
    seen_guards = []
    for gd in guards:
        if gd not in seen_guards:
            seen_guards.append(gd)
    return SimplifiedSystem(
        ivar=flat.ivar,
        differential_states=differential,
        solved_assignments=pre,
        algebraic_blocks=blocks,
        observed=dict(observed or {}),
        parameters=flat.parameters,
        defaults=dict(flat.defaults),
        provenance=flat,
        guards=seen_guards,
        externals=dict(flat.externals),
        blt=blt,
        reduced=flat,
    )


def structural_simplify(sys) -> SimplifiedSystem:
    """Alias elimination, matching, BLT sorting and tearing, in that order."""
    flat = flatten(sys)
    reduced, observed = alias_elimination(first_order_form(flat))
    g = build_incidence(reduced, highest_order_only=True)
    m = maximal_matching(g)
    if not m.is_perfect():
        unmatched = [str(reduced.equations[i]) for i, v in enumerate(m.eq_to_var) if v is None]
        raise SingularSystemError(
            "no perfect matching on highest-order derivatives (high-index DAE? "
            f"run dae_index_lowering first); unmatched: {unmatched}"
        )
    blt = blt_sort(g, m)
    out = tearing(reduced, blt, observed)
    out.provenance = flat
    return out


# -- Liouville --------------------------------------------------------------


def liouville_transform(sys, name: str = "trJ") -> FlatSystem:
    """Append ``D(w) ~ w * tr(J)`` tracking phase-space volume, with ``w(0) = 1``."""
    flat = flatten(sys)
    sset = set(flat.states)
    rhs: dict[SymbolId, Expr] = {}
    for eq in flat.equations:
        d = _explicit_definition(simplify_basic(eq.residual), sset)
        if d is None or d[0] in rhs:
            raise StructuralError(f"liouville_transform needs an explicit ODE; got algebraic equation {eq}")
        rhs[d[0]] = d[1]
    if set(rhs) != sset:
        raise StructuralError("liouville_transform needs one explicit ODE per state")
    fs = [rhs[s] for s in flat.states]
    tr = trace(jacobian([Equation(f) for f in fs], list(flat.states))) if fs else ZERO
    taken = {s.full_name for s in flat.states + flat.parameters}
    wname = name
    while wname in taken:
        wname += "_"
    w = SymbolId(wname, (), STATE, flat.ivar)
    new_eq = Equation(Deriv(Sym(w), flat.ivar, 1), simplify_basic(Apply("mul", (Sym(w), tr))))
    defaults = dict(flat.defaults)
    defaults[w] = 1.0
    return flat.replace(
        equations=list(flat.equations) + [new_eq], states=list(flat.states) + [w], defaults=defaults
    )
