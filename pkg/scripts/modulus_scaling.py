"""Fitted slope of log2 E[sup_{|r-s|<=2^-n} |B_r - B_s|^2] against n for several level windows.

The expected modulus behaves like 2^-n * n (Levy modulus), so fitted slopes
sit above -1 by roughly 1/(n ln 2) and approach -1 only as the window moves
to large n.

    python3 scripts/modulus_scaling.py --paths 10000 --level 12
"""
import argparse
import math

import numpy as np

from wzbdsde.lab import ols_slope
from wzbdsde.noise import DyadicGrid, modulus_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--level", type=int, default=12)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    ns = list(range(1, args.level + 1))
    stats = modulus_curve(args.seed, args.paths, DyadicGrid(args.level), ns)
    log_stats = dict(zip(ns, np.log2(stats)))
    for n in ns:
        print(f"n={n:2d} estimate={stats[n - 1]:.5e} log2={log_stats[n]:+.4f} "
              f"scaled by 2^n/(2 n ln 2)={stats[n - 1] * 2**n / (2 * n * math.log(2)):.3f}")
    for lo, hi in [(3, 8), (4, 9), (5, 10), (3, 11), (6, 11)]:
        if hi <= args.level:
            window = list(range(lo, hi + 1))
            print(f"window {lo}..{hi}: slope {ols_slope(window, [log_stats[n] for n in window]):+.4f}")


if __name__ == "__main__":
    main()
