"""Time serial vs level-parallel RHS evaluation on the RC circuit benchmark.

Usage: python scripts/rc_parallel_benchmark.py [--n 50] [--evals 200]
"""

import argparse
import time

import numpy as np

from eqmodel import models
from eqmodel.runtime import compile
from eqmodel.scheduler import build_schedule
from eqmodel.structural import structural_simplify


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--evals", type=int, default=200)
    args = ap.parse_args()

    s = structural_simplify(models.rc_circuits(args.n))
    sched = build_schedule(s)
    print(f"{len(s.algebraic_blocks)} torn blocks, sizes {sorted(set(s.block_sizes()))}, {len(sched.levels)} level(s)")
    c = compile(s)
    p = c.default_parameters()
    rng = np.random.default_rng(0)
    points = [c.default_state() + rng.uniform(-0.5, 0.5, c.n_states) for _ in range(args.evals)]

    results = {}
    for parallel in (False, True):
        ctx = c.new_context()
        t0 = time.perf_counter()
        out = [c.eval_rhs(u, p, 0.0, parallel=parallel, ctx=ctx) for u in points]
        dt = time.perf_counter() - t0
        results[parallel] = out
        label = "parallel" if parallel else "serial"
        print(f"{label:8s}: {1e3 * dt / args.evals:.3f} ms/eval, {ctx.newton_iterations} Newton iterations")
    same = all(a.tobytes() == b.tobytes() for a, b in zip(results[False], results[True]))
    print(f"bitwise identical: {same}")
    c.close()


if __name__ == "__main__":
    main()
