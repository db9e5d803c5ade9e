"""Time the compiled and numpy kernel backends on the same inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from evgrid.experiments import generate_profiles, merge_slots
from evgrid.grid import build_admittance, build_paper_grid
from evgrid.kernels import available_backends


def cases(T):
    grid = build_paper_grid()
    Y = build_admittance(grid)
    l0 = merge_slots(generate_profiles(0, 1)[0], T)
    L = np.array([4.608, 2.928, 0.0])
    w = np.ones(T)
    s = np.zeros((2 * T * 3 + 1, Y.shape[0]), dtype=complex)
    s[:, grid.evcs_bus_indices] = -np.random.default_rng(0).uniform(0, 0.08, (s.shape[0], 3))
    v0 = np.ones(Y.shape[0], dtype=complex)
    return {
        "waterfill_rows": lambda k: k.waterfill_rows(l0, L, w),
        "aggregate_schedule": lambda k: k.aggregate_schedule(l0, L, w, 100 * l0.size, 1e-12),
        f"power_flow_batch[{s.shape[0]}]": lambda k: k.solve_power_flow_batch(
            Y, s, v0, grid.slack_index, 1e-12, 50),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = available_backends()
    names = sorted(backends)
    print(f"{'kernel':<28}{'T':>3}" + "".join(f"{n + ' (us)':>16}" for n in names)
          + ("     speed-up" if len(names) > 1 else ""))
    for T in (2, 4, 8):
        for label, fn in cases(T).items():
            row = {}
            for n in names:
                k = backends[n]
                timer = timeit.Timer(lambda: fn(k))
                number, _ = timer.autorange()
                row[n] = min(timer.repeat(args.repeat, number)) / number * 1e6
            line = f"{label:<28}{T:>3}" + "".join(f"{row[n]:>16.2f}" for n in names)
            if len(names) > 1:
                line += f"{row['python'] / row['cython']:>12.1f}x"
            print(line)


if __name__ == "__main__":
    main()
