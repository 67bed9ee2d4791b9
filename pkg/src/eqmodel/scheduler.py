"""Level-parallel schedules over torn blocks, and incidence spy documents."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .structural import (
    BltDecomposition,
    IncidenceStructure,
    SimplifiedSystem,
    StructuralError,
    atom_label,
)
from .symcore import atoms, simplify_basic, substitute


@dataclass(frozen=True)
class Schedule:
    levels: tuple[tuple[int, ...], ...]
    block_deps: frozenset = field(default_factory=frozenset)

    @property
    def n_blocks(self) -> int:
        return sum(len(lv) for lv in self.levels)

    def level_of(self, block: int) -> int:
        for k, lv in enumerate(self.levels):
            if block in lv:
                return k
        raise KeyError(block)


def block_reads(block) -> set:
    reads = set()
    for r in block.residuals:
        reads |= atoms(r)
    for _, e in block.inner:
        reads |= atoms(e)
    return reads - set(block.outputs())


def build_schedule(s: SimplifiedSystem) -> Schedule:
    """Longest-path layering of the block dependency DAG.

    Only algebraic data flow between blocks creates edges; differential
    states are inputs to every block and never order them.
    """
    producer = {}
    for b, blk in enumerate(s.algebraic_blocks):
        for v in blk.outputs():
            producer[v] = b
    deps = set()
    for b, blk in enumerate(s.algebraic_blocks):
        for a in block_reads(blk):
            src = producer.get(a)
            if src is not None and src != b:
                deps.add((src, b))
    level = [0] * len(s.algebraic_blocks)
    preds: dict[int, list[int]] = {}
    for a, b in deps:
        if a >= b:
            raise StructuralError(f"block dependency {a}->{b} violates BLT order")
        preds.setdefault(b, []).append(a)
    for b in range(len(level)):
        level[b] = 1 + max((level[a] for a in preds.get(b, [])), default=-1)
    n_levels = max(level, default=-1) + 1
    levels = tuple(tuple(b for b in range(len(level)) if level[b] == k) for k in range(n_levels))
    return Schedule(levels, frozenset(deps))


@dataclass
class SpyDocument:
    rows: int
    cols: int
    marks: set
    row_labels: list = field(default_factory=list)
    col_labels: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = []
        for i in range(self.rows):
            lines.append("".join("#" if (i, j) in self.marks else "." for j in range(self.cols)))
        return "\n".join(lines) + ("\n" if lines else "")

    def to_pbm(self) -> str:
        out = [f"P1\n{self.cols} {self.rows}\n"]
        for i in range(self.rows):
            out.append(" ".join("1" if (i, j) in self.marks else "0" for j in range(self.cols)) + "\n")
        return "".join(out)


def render_spy(
    g: IncidenceStructure,
    ordering: Optional[BltDecomposition] = None,
    algebraic_only: bool = False,
) -> SpyDocument:
    """Incidence pattern, optionally permuted to BLT order and restricted to
    algebraic equations and variables."""
    rows = list(ordering.equation_order()) if ordering is not None else list(range(g.n_eqs))
    cols = list(ordering.variable_order()) if ordering is not None else list(range(g.n_vars))
    if algebraic_only:
        deriv_cols = {j for j, (_s, k) in enumerate(g.var_labels) if k > 0}
        if ordering is not None:
            m = ordering.matching
            rows = [i for i in rows if m.eq_to_var[i] not in deriv_cols]
        else:
            rows = [i for i in rows if not (g.incidence[i] & deriv_cols)]
        cols = [j for j in cols if j not in deriv_cols]
    rpos = {i: k for k, i in enumerate(rows)}
    cpos = {j: k for k, j in enumerate(cols)}
    marks = set()
    for i in rows:
        for j in g.incidence[i]:
            if j in cpos:
                marks.add((rpos[i], cpos[j]))
    col_labels = []
    for j in cols:
        s, k = g.var_labels[j]
        col_labels.append(s.full_name if k == 0 else f"D{k}({s.full_name})")
    return SpyDocument(len(rows), len(cols), marks, [g.eq_labels[i] for i in rows], col_labels)


def torn_incidence(s: SimplifiedSystem) -> IncidenceStructure:
    """Incidence of torn residuals against tearing variables, blocks in order.

    Inner assignments are substituted into the residuals so the pattern shows
    the true coupling the root finder sees.
    """
    rows = []
    labels = []
    col_index = {}
    for blk in s.algebraic_blocks:
        for v in blk.tearing_vars:
            col_index[v] = len(labels)
            labels.append(atom_label(v))
    eq_labels = []
    for b, blk in enumerate(s.algebraic_blocks):
        for k, r in enumerate(blk.residuals):
            for v, e in reversed(blk.inner):
                r = substitute(r, {v: e})
            r = simplify_basic(r)
            rows.append(frozenset(col_index[a] for a in atoms(r) if a in col_index))
            eq_labels.append((b, k))
    return IncidenceStructure(len(rows), len(labels), tuple(rows), tuple(labels), tuple(eq_labels), s.ivar)
