"""Compare the compiled and numpy enumeration backends.

Usage: python3 benchmarks/bench_enumeration.py [--sizes 12 16 20] [--repeat 3]
"""

import argparse
import time

import numpy as np

from epkit.exact import BACKEND, enumerate_ising
from epkit.experiments import random_spin_instance


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[12, 16, 20])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--no-pairs", action="store_true", help="skip pair moments")
    args = p.parse_args(argv)
    if BACKEND != "cython":
        print("compiled kernel not available; only the numpy backend can run")
    pairs = not args.no_pairs
    print(f"{'n':>4} {'numpy [s]':>12} {'cython [s]':>12} {'speedup':>9} {'|dlogZ|':>10}")
    for n in args.sizes:
        model = random_spin_instance(n, 0.5, seed=0, instance_index=n)
        t_np, r_np = best_time(lambda: enumerate_ising(model, pairs, backend="numpy"), args.repeat)
        if BACKEND == "cython":
            t_cy, r_cy = best_time(lambda: enumerate_ising(model, pairs, backend="cython"), args.repeat)
            diff = abs(r_cy.logZ - r_np.logZ)
            print(f"{n:>4} {t_np:>12.4f} {t_cy:>12.4f} {t_np / t_cy:>9.1f} {diff:>10.2e}")
        else:
            print(f"{n:>4} {t_np:>12.4f} {'-':>12} {'-':>9} {'-':>10}")


if __name__ == "__main__":
    main()
