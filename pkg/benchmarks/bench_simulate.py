"""Benchmark the compiled simulation kernels against the pure-numpy fallback.

Runs the same seeded hitting-time workload twice in subprocesses — once with
the accelerated kernels and once with CYCLEWALK_DISABLE_NUMBA=1 — and reports
wall-clock times and the speedup. Subprocesses are used because the kernel
selection happens at import time.

Usage: python3 benchmarks/bench_simulate.py [--samples 2000] [--grid 16]
"""

import argparse
import os
import subprocess
import sys

WORKLOAD = """
import time
import numpy as np
import cyclewalk as cw
import cyclewalk.simulate as sim

field = cw.double_well_1d()
lat = cw.discretize(field, {grid}, [cw.Cycle(((0,), (1,), (0,)))])
g = cw.build_generator(lat, field)
x = lat.coords()[:, 0]
x0 = int(np.argmin(np.abs(x + 1.0)))
A = [int(np.argmin(np.abs(x - 1.0)))]

# warm-up compiles the kernels (no-op on the numpy path)
cw.estimate_mean_hitting(g, x0, A, n=2, seed=0)

t0 = time.perf_counter()
st = cw.estimate_mean_hitting(g, x0, A, n={samples}, seed=42)
dt = time.perf_counter() - t0
print(f"{{'numba' if sim.HAS_NUMBA else 'numpy'}} {{dt:.4f}} {{st.mean:.6e}}")
"""


def run_once(disable_numba: bool, samples: int, grid: int) -> tuple:
    env = dict(os.environ)
    env["CYCLEWALK_DISABLE_NUMBA"] = "1" if disable_numba else "0"
    code = WORKLOAD.format(samples=samples, grid=grid)
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    kind, dt, mean = out.stdout.split()
    return kind, float(dt), float(mean)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=2000,
                    help="hitting-time replicas per run")
    ap.add_argument("--grid", type=int, default=16,
                    help="lattice refinement N")
    args = ap.parse_args()

    kind_fast, t_fast, mean_fast = run_once(False, args.samples, args.grid)
    kind_slow, t_slow, mean_slow = run_once(True, args.samples, args.grid)
    print(f"workload: {args.samples} hitting-time samples, "
          f"1D double well at N={args.grid}")
    print(f"  {kind_fast:>5}: {t_fast:8.3f} s   (mean {mean_fast:.6e})")
    print(f"  {kind_slow:>5}: {t_slow:8.3f} s   (mean {mean_slow:.6e})")
    if kind_fast == "numba":
        print(f"  speedup: {t_slow / t_fast:.1f}x")
    else:
        print("  numba unavailable; both runs used the numpy fallback")
    agree = abs(mean_fast - mean_slow) <= 1e-9 * max(abs(mean_fast), 1.0)
    print(f"  sample means agree: {'yes' if agree else 'NO'}")
    return 0 if agree else 1


if __name__ == "__main__":
    sys.exit(main())
