#!/usr/bin/env python3
"""Race the compiled jet kernel against the NumPy fallback.

Two measurements:

1. Kernel microbenchmark: second-order jets of the Schwarzschild
   Eddington-Finkelstein metric components over growing point batches
   (this call dominates every ODE right-hand side).
2. End-to-end: build the Minkowski-cone congruence (128 rays) in a
   subprocess with each backend selected via NULLFLOW_PURE_PYTHON.

Usage: python benchmarks/bench_tape.py [--repeats N]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from nullflow import _tape_py
from nullflow.geometry import builtin_metric

try:
    from nullflow import _tape_cy
except ImportError:
    _tape_cy = None

END_TO_END = """
import time, numpy as np, nullflow as nf
t0 = time.perf_counter()
seed = nf.SeedSurface.from_sources(
    ["0.0", "2.0", "x0", "x1"],
    domain=[(0.0, np.pi), (0.0, 2*np.pi)], resolution=[8, 16],
    outward=["0", "1", "0", "0"])
cong = nf.build_congruence(nf.builtin_metric("schwarzschild_ef"), seed,
                           t_end=5.0)
mu = nf.make_measure(cong)
rep = nf.convexity_report(mu, 2.0)
print(f"{nf.backend_name()} {time.perf_counter()-t0:.3f}")
"""


def time_call(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_bench(repeats):
    metric = builtin_metric("schwarzschild_ef")
    tape = metric._tape("metric")
    rng = np.random.default_rng(0)
    print("jet evaluation, Schwarzschild EF metric components "
          f"({tape.n_outputs} expressions, {len(tape.ops)} tape ops)")
    print(f"{'batch':>8} {'numpy µs/pt':>14} {'compiled µs/pt':>16} "
          f"{'speedup':>8}")
    for m in (1, 16, 128, 512, 2048):
        X = np.column_stack([
            rng.uniform(-1, 1, m), rng.uniform(2.5, 6.0, m),
            rng.uniform(0.5, 2.6, m), rng.uniform(0, 2 * np.pi, m)])
        t_py = time_call(lambda: _tape_py.eval_jets(tape.ops, tape.consts,
                                                    tape.outs, X), repeats)
        if _tape_cy is not None:
            t_cy = time_call(lambda: _tape_cy.eval_jets(tape.ops, tape.consts,
                                                        tape.outs, X), repeats)
            print(f"{m:>8} {1e6 * t_py / m:>14.2f} {1e6 * t_cy / m:>16.2f} "
                  f"{t_py / t_cy:>8.1f}x")
        else:
            print(f"{m:>8} {1e6 * t_py / m:>14.2f} {'n/a':>16} {'n/a':>8}")


def end_to_end():
    print("\nend-to-end congruence + entropy report "
          "(Schwarzschild horizon, 128 rays, t to 5)")
    for label, env_extra in (("compiled", {}),
                             ("python", {"NULLFLOW_PURE_PYTHON": "1"})):
        if label == "compiled" and _tape_cy is None:
            print("  compiled backend unavailable; skipping")
            continue
        env = dict(os.environ, **env_extra)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env,
                             capture_output=True, text=True, check=True)
        backend, wall = out.stdout.split()
        print(f"  backend {backend:>9}: {float(wall):.3f} s")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()
    kernel_bench(args.repeats)
    if not args.skip_end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
