#!/usr/bin/env python3
"""Benchmark the special-function kernels: numba JIT vs pure-Python fallback.

Runs each workload in two subprocesses (one with ANNODIST_NO_NUMBA=1) so the
import-time backend selection is exercised exactly as users hit it, then
prints a side-by-side table.  JIT compile time is excluded by a warmup call.

    python benchmarks/bench_special.py [--sizes 2000 20000]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json
import sys
import time

import numpy as np

import annodist
from annodist.special import digamma, inv_reg_inc_beta, reg_inc_beta

size = int(sys.argv[1])
rng = np.random.default_rng(0)
x = rng.uniform(0.0, 1.0, size)
p = rng.uniform(0.0, 1.0, size)
a = rng.uniform(0.2, 50.0, size)
b = rng.uniform(0.2, 50.0, size)

workloads = {
    "digamma": lambda: digamma(a),
    "reg_inc_beta": lambda: reg_inc_beta(x, a, b),
    "inv_reg_inc_beta": lambda: inv_reg_inc_beta(p, a, b),
}

results = {"numba": annodist.NUMBA_ENABLED}
for name, fn in workloads.items():
    fn()  # warmup; also triggers JIT compilation on the accelerated path
    reps = 5
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    results[name] = (time.perf_counter() - start) / reps
print(json.dumps(results))
"""


def run_backend(size: int, disable_numba: bool) -> dict:
    env = dict(os.environ)
    if disable_numba:
        env["ANNODIST_NO_NUMBA"] = "1"
    else:
        env.pop("ANNODIST_NO_NUMBA", None)
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(size)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[2000, 20000])
    args = parser.parse_args()

    for size in args.sizes:
        jit = run_backend(size, disable_numba=False)
        plain = run_backend(size, disable_numba=True)
        backend = "numba" if jit["numba"] else "python (numba unavailable)"
        print(f"\nn = {size}  (accelerated backend: {backend})")
        print(f"{'kernel':<20} {'python [ms]':>12} {'jit [ms]':>12} {'speedup':>9}")
        for name in ("digamma", "reg_inc_beta", "inv_reg_inc_beta"):
            t_plain = plain[name] * 1e3
            t_jit = jit[name] * 1e3
            ratio = t_plain / t_jit if t_jit > 0 else float("inf")
            print(f"{name:<20} {t_plain:>12.2f} {t_jit:>12.2f} {ratio:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
