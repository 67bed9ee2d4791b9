"""Continuous-time echo state network surrogates.

A fixed random reservoir ``r' = tanh(A r + W_fb x(p*, t))`` is driven once by
the full model's outputs at the box center ``p*``. For each training
parameter a linear readout ``W_out(p)`` is fitted so that ``x(p, t) ~ W_out(p) r(t)``;
readouts are interpolated over parameter space with radial basis functions.
Prediction is a matrix product against the stored reservoir trajectory and
never integrates anything.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.interpolate import RBFInterpolator
from scipy.stats import qmc

from .runtime import CompiledRhs, compile, reconstruct_observed
from .solvers import SolverOptions, solve_tsit5
from .structural import SimplifiedSystem
from .symcore import PARAMETER, STATE, Sym, SymbolId, independent
from .sysmodel import ExternalOutput, make_system

ARCHIVE_FORMAT = "ctesn-archive/1"


class SurrogateError(Exception):
    pass


class OutOfDomainError(SurrogateError):
    pass


@dataclass(frozen=True)
class CtesnConfig:
    """Reservoir and training hyperparameters.

    Attributes:
        reservoir_size: Number of reservoir units ``N_r``.
        density: Fraction of nonzero entries of ``A``.
        spectral_radius: Target spectral radius of ``A``.
        feedback_scale: ``W_fb`` entries are uniform in ``[-scale, scale]``.
        n_train_samples: Latin-hypercube samples of the parameter box.
        ridge: Tikhonov weight ``lambda`` of the readout fit.
        seed: Seed for ``A``, ``W_fb`` and the sample design.
        n_grid: Points of the uniform time grid.
        abstol: Solver absolute tolerance for full-model and reservoir solves.
        reltol: Solver relative tolerance.
        domain_margin: Relative box extension accepted by ``predict``.
    """

    reservoir_size: int = 200
    density: float = 0.1
    spectral_radius: float = 1.0
    feedback_scale: float = 1.0
    n_train_samples: int = 8
    ridge: float = 1e-8
    seed: int = 0
    n_grid: int = 200
    abstol: float = 1e-8
    reltol: float = 1e-8
    domain_margin: float = 0.1

    def __post_init__(self):
        if self.reservoir_size < 1:
            raise ValueError("reservoir_size must be >= 1")
        if not 0 < self.density <= 1:
            raise ValueError("density must be in (0, 1]")
        if not self.spectral_radius > 0:
            raise ValueError("spectral_radius must be positive")
        if self.n_train_samples < 1:
            raise ValueError("n_train_samples must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.n_grid < 2:
            raise ValueError("n_grid must be >= 2")


# -- reservoir construction -------------------------------------------------


def spectral_radius_estimate(A, tol: float = 1e-6, block: int = 6, max_iter: int = 20000, seed: int = 0) -> float:
    """Dominant eigenvalue modulus by block power iteration with Rayleigh-Ritz.

    A block of several vectors captures complex-conjugate dominant pairs that
    defeat single-vector power iteration.
    """
    n = A.shape[0]
    if n == 1:
        return float(abs(A[0, 0] if not sparse.issparse(A) else A.toarray()[0, 0]))
    k = min(block, n)
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    prev = -1.0
    est = 0.0
    for _ in range(max_iter):
        Z = A @ Q
        H = Q.T @ Z
        est = float(np.max(np.abs(np.linalg.eigvals(H))))
        if abs(est - prev) <= tol * max(est, 1e-300):
            break
        prev = est
        Q, _ = np.linalg.qr(Z)
    return est


def make_reservoir(cfg: CtesnConfig, n_out: int):
    """Sparse ``A`` (uniform +-1 entries rescaled to the target radius) and dense ``W_fb``."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.reservoir_size
    A = sparse.random(n, n, density=cfg.density, format="csr", rng=rng,
                      data_rvs=lambda size: rng.choice(np.array([-1.0, 1.0]), size=size))
    rho = spectral_radius_estimate(A)
    if rho == 0.0:
        raise SurrogateError("reservoir matrix is nilpotent; increase density")
    A = (A * (cfg.spectral_radius / rho)).tocoo()
    A = sparse.coo_matrix((A.data, (A.row, A.col)), shape=(n, n))
    A.sum_duplicates()
    W_fb = rng.uniform(-cfg.feedback_scale, cfg.feedback_scale, size=(n, n_out))
    return A.tocsr(), W_fb


# -- full model sampling ----------------------------------------------------


def _resolve(c: CompiledRhs, key) -> int:
    name = key.full_name if isinstance(key, SymbolId) else str(key)
    for i, q in enumerate(c.parameters):
        if q.full_name == name:
            return i
    raise SurrogateError(f"unknown parameter {name}")


def simulate_outputs(c: CompiledRhs, outputs: Sequence[SymbolId], p, grid: np.ndarray,
                     opts: SolverOptions) -> np.ndarray:
    """Full-model output values on ``grid`` (rows are times)."""
    s = c.system
    sol = solve_tsit5(c, c.default_state(), (grid[0], grid[-1]), p, SolverOptions(
        abstol=opts.abstol, reltol=opts.reltol, saveat=tuple(grid[1:])))
    if not sol.success:
        raise SurrogateError(f"full model solve failed at p={list(p)}: {sol.status} {sol.message}")
    idx = np.searchsorted(sol.ts, grid)
    if not np.array_equal(sol.ts[np.minimum(idx, len(sol.ts) - 1)], grid):
        raise SurrogateError("solver did not land on the output grid")
    states = {x: i for i, x in enumerate(c.states)}
    out = np.empty((len(grid), len(outputs)))
    need_obs = any(o not in states for o in outputs)
    for r, k in enumerate(idx):
        u = sol.us[k]
        obs = reconstruct_observed(s, u, p, grid[r], c) if need_obs else {}
        for j, o in enumerate(outputs):
            if o in states:
                out[r, j] = u[states[o]]
            elif o in obs:
                out[r, j] = obs[o]
            else:
                raise SurrogateError(f"{o.full_name} is neither a state nor observable")
    return out


def ridge_fit(R: np.ndarray, X: np.ndarray, lam: float) -> np.ndarray:
    """``argmin_W sum_k |W r_k - x_k|^2 + lam |W|^2`` with ``R`` as (K, N_r), ``X`` as (K, n_out)."""
    K, n = R.shape
    if lam == 0.0:
        if np.linalg.matrix_rank(R) < n:
            raise SurrogateError("rank-deficient readout regression with zero ridge")
        Wt, *_ = np.linalg.lstsq(R, X, rcond=None)
        return Wt.T
    aug = np.vstack([R, math.sqrt(lam) * np.eye(n)])
    rhs = np.vstack([X, np.zeros((n, X.shape[1]))])
    Wt, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return Wt.T


def ridge_objective(W: np.ndarray, R: np.ndarray, X: np.ndarray, lam: float) -> float:
    return float(np.sum((R @ W.T - X) ** 2) + lam * np.sum(W**2))


# -- surrogate --------------------------------------------------------------


@dataclass
class CtesnSurrogate:
    cfg: CtesnConfig
    param_names: list[str]
    output_names: list[str]
    box: np.ndarray  # (n_params, 2)
    p_star: np.ndarray
    grid: np.ndarray
    A: sparse.csr_matrix
    W_fb: np.ndarray
    r_traj: np.ndarray  # (n_grid, N_r)
    samples: np.ndarray  # (n_samples, n_params)
    readouts: np.ndarray  # (n_samples, n_out, N_r)
    x_star: Optional[np.ndarray] = None
    _interp: Optional[RBFInterpolator] = field(default=None, repr=False)

    def __post_init__(self):
        self._interp = self._build_interpolator()

    @property
    def n_out(self) -> int:
        return len(self.output_names)

    def _normalize(self, p: np.ndarray) -> np.ndarray:
        lo, hi = self.box[:, 0], self.box[:, 1]
        width = np.where(hi > lo, hi - lo, 1.0)
        return (np.atleast_2d(p) - lo) / width

    def _build_interpolator(self):
        n_s = len(self.samples)
        flat = self.readouts.reshape(n_s, -1)
        if n_s == 1 or np.all(flat == flat[0]):
            return None
        d = self.samples.shape[1]
        degree = 1 if n_s >= d + 1 else 0
        return RBFInterpolator(self._normalize(self.samples), flat, kernel="thin_plate_spline", degree=degree)

    def readout(self, p) -> np.ndarray:
        """Interpolated ``W_out(p)``."""
        p = np.asarray(p, dtype=float).reshape(-1)
        self.check_domain(p)
        if self._interp is None:
            return self.readouts[0].copy()
        return self._interp(self._normalize(p)).reshape(self.n_out, -1)

    def check_domain(self, p: np.ndarray):
        if len(p) != len(self.param_names):
            raise OutOfDomainError(f"expected {len(self.param_names)} parameters, got {len(p)}")
        lo, hi = self.box[:, 0], self.box[:, 1]
        m = self.cfg.domain_margin * (hi - lo)
        bad = (p < lo - m) | (p > hi + m)
        if np.any(bad):
            names = [n for n, b in zip(self.param_names, bad) if b]
            raise OutOfDomainError(f"parameters {names} outside the extended training box")

    def reservoir_at(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float).reshape(-1)
        t0, t1 = self.grid[0], self.grid[-1]
        if np.any(ts < t0) or np.any(ts > t1):
            raise OutOfDomainError(f"query times outside the training span [{t0}, {t1}]")
        k = np.clip(np.searchsorted(self.grid, ts, side="right") - 1, 0, len(self.grid) - 2)
        w = ((ts - self.grid[k]) / (self.grid[k + 1] - self.grid[k]))[:, None]
        return (1.0 - w) * self.r_traj[k] + w * self.r_traj[k + 1]

    def predict(self, p, ts) -> np.ndarray:
        """Outputs at times ``ts`` (rows) for parameters ``p``."""
        W = self.readout(p)
        return self.reservoir_at(ts) @ W.T

    # serialization

    def to_dict(self) -> dict:
        A = self.A.tocoo()
        return {
            "format": ARCHIVE_FORMAT,
            "config": asdict(self.cfg),
            "param_names": list(self.param_names),
            "output_names": list(self.output_names),
            "box": self.box.tolist(),
            "p_star": self.p_star.tolist(),
            "grid": self.grid.tolist(),
            "A": {"n": int(A.shape[0]), "row": A.row.tolist(), "col": A.col.tolist(), "data": A.data.tolist()},
            "W_fb": self.W_fb.tolist(),
            "r_traj": self.r_traj.tolist(),
            "samples": self.samples.tolist(),
            "readouts": self.readouts.tolist(),
            "x_star": None if self.x_star is None else self.x_star.tolist(),
        }

    def dumps(self) -> str:
        # json writes floats with repr, the shortest round-trip form
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True) + "\n"

    def save(self, path) -> None:
        from .fileio import atomic_write_text

        atomic_write_text(path, self.dumps())

    @classmethod
    def from_dict(cls, d: Mapping) -> "CtesnSurrogate":
        if d.get("format") != ARCHIVE_FORMAT:
            raise SurrogateError(f"unsupported archive format {d.get('format')!r}")
        n = d["A"]["n"]
        A = sparse.coo_matrix((np.array(d["A"]["data"], dtype=float), (d["A"]["row"], d["A"]["col"])), shape=(n, n))
        return cls(
            cfg=CtesnConfig(**d["config"]),
            param_names=list(d["param_names"]),
            output_names=list(d["output_names"]),
            box=np.array(d["box"], dtype=float).reshape(-1, 2),
            p_star=np.array(d["p_star"], dtype=float),
            grid=np.array(d["grid"], dtype=float),
            A=A.tocsr(),
            W_fb=np.array(d["W_fb"], dtype=float).reshape(n, -1),
            r_traj=np.array(d["r_traj"], dtype=float),
            samples=np.array(d["samples"], dtype=float).reshape(-1, len(d["param_names"])),
            readouts=np.array(d["readouts"], dtype=float),
            x_star=None if d["x_star"] is None else np.array(d["x_star"], dtype=float),
        )

    @classmethod
    def loads(cls, text: str) -> "CtesnSurrogate":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "CtesnSurrogate":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def predict(s: CtesnSurrogate, p, ts) -> np.ndarray:
    return s.predict(p, ts)


def _as_compiled(full_model) -> CompiledRhs:
    if isinstance(full_model, CompiledRhs):
        return full_model
    if isinstance(full_model, SimplifiedSystem):
        return compile(full_model)
    raise TypeError("full_model must be a SimplifiedSystem or CompiledRhs")


def _resolve_outputs(c: CompiledRhs, outputs) -> list[SymbolId]:
    if not outputs:
        raise SurrogateError("at least one output is required")
    s = c.system
    known = {x.full_name: x for x in c.states}
    atoms_ = [v for v, _ in s.solved_assignments] + [v for blk in s.algebraic_blocks for v in blk.outputs()]
    for v in atoms_:
        if isinstance(v, Sym):
            known.setdefault(v.sym.full_name, v.sym)
    for x in list(s.observed) + list(s.externals):
        known.setdefault(x.full_name, x)
    out = []
    for o in outputs:
        name = o.full_name if isinstance(o, SymbolId) else getattr(getattr(o, "sym", None), "full_name", str(o))
        if name not in known:
            raise SurrogateError(f"unknown output {name}")
        out.append(known[name])
    return out


def train_ctesn(full_model, outputs, space: Mapping, cfg: CtesnConfig = CtesnConfig(), tspan=(0.0, 1.0)) -> CtesnSurrogate:
    """Train a surrogate of ``outputs`` over the parameter box ``space``.

    Args:
        full_model: Simplified (or compiled) model to sample.
        outputs: States or observable variables to reproduce.
        space: Mapping from parameter (name or symbol) to ``(lo, hi)``;
            unlisted parameters stay at their defaults.
        cfg: Hyperparameters.
        tspan: Time span covered by the surrogate.
    """
    c = _as_compiled(full_model)
    out_syms = _resolve_outputs(c, outputs)
    if not space:
        raise SurrogateError("empty parameter space")
    pidx = [_resolve(c, k) for k in space]
    box = np.array([[float(lo), float(hi)] for lo, hi in space.values()])
    if np.any(box[:, 1] < box[:, 0]):
        raise SurrogateError("parameter box bounds must satisfy lo <= hi")
    base = c.default_parameters()
    opts = SolverOptions(abstol=cfg.abstol, reltol=cfg.reltol)
    grid = np.linspace(float(tspan[0]), float(tspan[1]), cfg.n_grid)

    def full_params(q):
        p = base.copy()
        p[pidx] = q
        return p

    p_star = box.mean(axis=1)
    x_star = simulate_outputs(c, out_syms, full_params(p_star), grid, opts)

    A, W_fb = make_reservoir(cfg, len(out_syms))

    def drive(t):
        k = min(max(int(np.searchsorted(grid, t, side="right")) - 1, 0), len(grid) - 2)
        w = (t - grid[k]) / (grid[k + 1] - grid[k])
        return (1.0 - w) * x_star[k] + w * x_star[k + 1]

    def reservoir_rhs(r, _p, t):
        return np.tanh(A @ r + W_fb @ drive(t))

    r0 = np.tanh(W_fb @ x_star[0])
    sol = solve_tsit5(reservoir_rhs, r0, (grid[0], grid[-1]), (), SolverOptions(
        abstol=cfg.abstol, reltol=cfg.reltol, saveat=tuple(grid[1:])))
    if not sol.success:
        raise SurrogateError(f"reservoir integration failed: {sol.status}")
    r_traj = sol.us[np.searchsorted(sol.ts, grid)]

    sampler = qmc.LatinHypercube(d=len(pidx), rng=np.random.default_rng(cfg.seed))
    unit = sampler.random(cfg.n_train_samples)
    samples = qmc.scale(unit, box[:, 0], box[:, 1]) if np.all(box[:, 1] > box[:, 0]) else np.tile(box[:, 0], (cfg.n_train_samples, 1))
    readouts = []
    for q in samples:
        X = simulate_outputs(c, out_syms, full_params(q), grid, opts)
        readouts.append(ridge_fit(r_traj, X, cfg.ridge))
    return CtesnSurrogate(
        cfg=cfg,
        param_names=[c.parameters[i].full_name for i in pidx],
        output_names=[o.full_name for o in out_syms],
        box=box,
        p_star=p_star,
        grid=grid,
        A=A,
        W_fb=W_fb,
        r_traj=r_traj,
        samples=np.asarray(samples, dtype=float),
        readouts=np.array(readouts),
        x_star=x_star,
    )


@dataclass
class SurrogateComponent:
    """A trained surrogate packaged as a composable system component."""

    surrogate: CtesnSurrogate

    @property
    def outputs(self) -> list[str]:
        return list(self.surrogate.output_names)

    def provider(self, pvals, t):
        return self.surrogate.predict(pvals, [t])[0]

    def as_system(self, name: str = "surrogate", ivar: str = "t", defaults: Optional[Mapping] = None):
        """System with the box parameters and one external output per surrogate output.

        Output and parameter names keep only their last path component so the
        component can be namespaced under a parent.
        """
        t = independent(ivar).sym
        params = tuple(SymbolId(n.split(".")[-1], (), PARAMETER) for n in self.surrogate.param_names)
        ext = {}
        for j, n in enumerate(self.surrogate.output_names):
            ext[SymbolId(n.split(".")[-1], (), STATE, t)] = ExternalOutput(self.provider, params, j)
        dflt = {q: float(v) for q, v in zip(params, self.surrogate.p_star)}
        for k, v in (defaults or {}).items():
            for q in params:
                if q.name == (k.name if isinstance(k, SymbolId) else str(k)):
                    dflt[q] = float(v)
        return make_system(name, t, [], [], params, defaults=dflt, externals=ext)


def surrogatize(full_model, outputs, space: Mapping, cfg: CtesnConfig = CtesnConfig(), tspan=(0.0, 1.0)) -> SurrogateComponent:
    return SurrogateComponent(train_ctesn(full_model, outputs, space, cfg, tspan))
