"""Acausal equation-based modeling: symbolic systems, structural
simplification, compiled right-hand sides, integrators and surrogates."""

from .symcore import (
    Differential,
    Equation,
    Sym,
    SymbolId,
    cos,
    differentiate,
    evaluate,
    exp,
    independent,
    jacobian,
    log,
    parameters,
    render,
    simplify_basic,
    sin,
    sqrt,
    substitute,
    variables,
)
from .sysmodel import FlatSystem, OdeSystem, flatten, make_system, validate
from .structural import (
    alias_elimination,
    blt_sort,
    build_incidence,
    dae_index_lowering,
    liouville_transform,
    maximal_matching,
    pantelides,
    structural_simplify,
    tearing,
)
from .scheduler import build_schedule, render_spy
from .runtime import CompiledRhs, NewtonConfig, compile, eval_rhs, reconstruct_observed
from .solvers import Solution, SolverOptions, solve_implicit_euler_mass_matrix, solve_rk4_fixed, solve_tsit5
from .tracing import TraceProblem, modelingtoolkitize
from .surrogate import CtesnConfig, CtesnSurrogate, predict, surrogatize, train_ctesn
from .dsl import parse_model, render_model

__version__ = "0.1.0"
