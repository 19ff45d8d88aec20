"""Compare the numba and numpy backends of the hot kernels.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is called
once to trigger compilation, then timed as the best of ``--repeat`` runs.
Outputs are checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ergomeasure import kernels
from ergomeasure.mapdsl import parse_map
from ergomeasure.noise import make_rng, wrapped_gaussian_kernel


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(scale: int):
    noise = wrapped_gaussian_kernel(0.1)
    sigma, wraps = noise.epsilon, noise.wrap_terms
    system = parse_map("sine2:0.1")
    n = 512 * scale
    lo = np.linspace(0.0, 1.0, n, endpoint=False)
    hi = lo + 1.0 / n
    targets = (np.arange(64) + 0.5) / 64
    images = np.mod(system.lift(np.linspace(0, 1, 64 * 40 * scale, endpoint=False)), 1.0)
    z = noise.increments(make_rng(0), 200_000 * scale)
    return {
        "gauss_envelope": (lambda: kernels.gauss_envelope_numba(lo, hi, n, sigma, wraps),
                           lambda: kernels.gauss_envelope_numpy(lo, hi, n, sigma, wraps)),
        "taylor_table": (lambda: kernels.taylor_table_numba(targets, images, sigma, wraps, 31, 1 / 128),
                         lambda: kernels.taylor_table_numpy(targets, images, sigma, wraps, 31, 1 / 128)),
        "run_chain": (lambda: kernels.run_chain_numba(system, 0.3, z),
                      lambda: kernels.run_chain_numpy(system, 0.3, z)),
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--scale", type=int, default=1, help="problem size multiplier")
    args = parser.parse_args(argv)

    print(f"{'kernel':<16}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, (fast, slow) in cases(args.scale).items():
        diff = float(np.max(np.abs(fast() - slow())))
        t_fast = best_of(fast, args.repeat)
        t_slow = best_of(slow, args.repeat)
        print(f"{name:<16}{t_fast:>12.4f}{t_slow:>12.4f}{t_slow / t_fast:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
