"""Train a CTESN surrogate of the stiff3 model and measure held-out error and speedup.

Usage: python scripts/surrogate_experiment.py [--samples 8] [--reservoir 200] [--seed 7]
"""

import argparse
import time

import numpy as np

from eqmodel import models
from eqmodel.runtime import compile
from eqmodel.solvers import SolverOptions
from eqmodel.structural import structural_simplify
from eqmodel.surrogate import CtesnConfig, _resolve_outputs, simulate_outputs, train_ctesn


def best_time(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=8)
    ap.add_argument("--reservoir", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--lo", type=float, default=5.0)
    ap.add_argument("--hi", type=float, default=50.0)
    ap.add_argument("--t-end", type=float, default=5.0)
    args = ap.parse_args()

    c = compile(structural_simplify(models.stiff3()))
    cfg = CtesnConfig(reservoir_size=args.reservoir, n_train_samples=args.samples, seed=args.seed)
    outputs = ["f", "s", "y"]
    t0 = time.perf_counter()
    sur = train_ctesn(c, outputs, {"k": (args.lo, args.hi)}, cfg, (0.0, args.t_end))
    print(f"trained in {time.perf_counter() - t0:.2f} s on k = {np.round(sur.samples[:, 0], 3).tolist()}")

    outs = _resolve_outputs(c, outputs)
    opts = SolverOptions(abstol=cfg.abstol, reltol=cfg.reltol)
    ki = [q.name for q in c.parameters].index("k")
    for k in np.linspace(args.lo, args.hi, 7):
        p = c.default_parameters()
        p[ki] = k
        truth = simulate_outputs(c, outs, p, sur.grid, opts)
        pred = sur.predict([k], sur.grid)
        rel = np.sqrt(np.mean((pred - truth) ** 2, axis=0)) / np.sqrt(np.mean(truth**2, axis=0))
        ratio = best_time(lambda: sur.predict([k], sur.grid)) / best_time(lambda: simulate_outputs(c, outs, p, sur.grid, opts))
        print(f"k={k:7.3f}  rel RMS " + " ".join(f"{n}={e:.2%}" for n, e in zip(outputs, rel)) + f"  time ratio {ratio:.4f}")


if __name__ == "__main__":
    main()
