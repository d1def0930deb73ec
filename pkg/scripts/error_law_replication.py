"""How often the closed-form error-law check fails when the error law is exact.

For const_g the solvers reproduce Y^n - Y = -sigma (B^n - B) to rounding,
so the check can be replicated from B paths alone. The statistic is the
maximum over grid times of a 64-sample mean, compared to sigma^2 2^-n with a
3-standard-error band at the maximizing time.

    python3 scripts/error_law_replication.py --reps 4000
"""
import argparse

import numpy as np

from wzbdsde.noise import BrownianPair, DyadicGrid, InterpolatedNoise, cumulative, fine_values


def check_once(rng, levels, outer, sigma, extra):
    failed = []
    for n in levels:
        m = n + extra
        grid = DyadicGrid(m)
        err = np.empty((outer, grid.count + 1))
        for b in range(outer):
            db = rng.standard_normal(grid.count) * np.sqrt(grid.mesh)
            nz = InterpolatedNoise(BrownianPair(grid, np.zeros_like(db), db, 0, 0), n)
            err[b] = sigma**2 * (fine_values(nz, m) - cumulative(db)) ** 2
        mean = err.mean(axis=0)
        i = int(np.argmax(mean))
        se = err[:, i].std(ddof=1) / np.sqrt(outer)
        if abs(mean[i] - sigma**2 * 2.0**-n) > 3 * se + 1e-6:
            failed.append(n)
    return failed


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--outer", type=int, default=64)
    ap.add_argument("--sigma", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    levels = list(range(3, 8))
    rng = np.random.default_rng(args.seed)
    any_fail, per_level = 0, dict.fromkeys(levels, 0)
    for _ in range(args.reps):
        failed = check_once(rng, levels, args.outer, args.sigma, 2)
        any_fail += bool(failed)
        for n in failed:
            per_level[n] += 1
    print(f"replications: {args.reps}")
    print(f"P(any level fails) = {any_fail / args.reps:.4f}")
    for n in levels:
        print(f"  n={n}: {per_level[n] / args.reps:.4f}")


if __name__ == "__main__":
    main()
