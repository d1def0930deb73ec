"""Acceptance criteria A1-A7 at their stated sizes and tolerances.

Each test records one PASS/FAIL line, printed in the pytest summary. Running
this file directly prints the same lines without pytest.
"""
import math
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from wzbdsde.cli import main as cli_main
from wzbdsde.engine import RegressionBasis, solve_coupled
from wzbdsde.lab import CONTROL, ExperimentPlan, estimate_errors, identity_suite, moment_bounds, ols_slope
from wzbdsde.noise import DyadicGrid, modulus_curve
from wzbdsde.problem import BUILTIN, make_problem

LEVELS = (3, 4, 5, 6, 7)
SIGMA = 0.5


def check_a1():
    plan = ExperimentPlan(problem="const_g", wz_levels=LEVELS, extra_levels=2, grid="per_level",
                          outer_count=64, inner_count=4096)
    rep = estimate_errors(plan)
    parts, ok = [], True
    for lv in rep.levels:
        target = SIGMA**2 * 2.0**-lv.n
        within = abs(lv.sup_y_err2 - target) <= 3 * lv.sup_y_err2_se + 1e-6 and lv.z_err_int <= 1e-6
        ok &= within
        parts.append(f"n={lv.n}: z={(lv.sup_y_err2 - target) / lv.sup_y_err2_se:+.2f}SE zint={lv.z_err_int:.1e}")
    return ok, "; ".join(parts)


def check_a2():
    parts, ok = [], True
    for name in ("sine_g", "tanh_g"):
        rep = estimate_errors(ExperimentPlan(problem=name, wz_levels=LEVELS, outer_count=64, inner_count=2048))
        ok &= rep.slope is not None and rep.slope <= -0.4
        parts.append(f"{name} slope={rep.slope:.3f}")
    return ok, ", ".join(parts) + " (bound -0.4)"


def check_a3():
    p = make_problem("zero_g")
    plan = ExperimentPlan(problem="zero_g", wz_levels=LEVELS, outer_count=8, inner_count=512)
    identical = True
    for b in range(plan.outer_count):
        db, dw = plan.outer_noise(b)
        sols = solve_coupled(p, db, dw, plan.fine_level, [None, *LEVELS], plan.basis)
        for n in LEVELS:
            identical &= np.array_equal(sols[n].y, sols[None].y) and np.array_equal(sols[n].z, sols[None].z)
    rep = estimate_errors(plan)
    zero = all(lv.composite == 0.0 for lv in rep.levels)
    return identical and zero, f"bitwise identical={identical}, composite all zero={zero}"


def check_a4():
    parts, ok = [], True
    for name in ("const_g", "sine_g"):
        rep = identity_suite(ExperimentPlan(problem=name, wz_levels=(4,), outer_count=64, inner_count=1024))
        zs = {e.name: e.z for e in rep.entries}
        ctrl = abs(zs[CONTROL])
        ok &= rep.all_passed and ctrl > 3
        body = " ".join(f"{z:+.2f}" for k, z in zs.items() if k != CONTROL)
        parts.append(f"{name} z=[{body}] control |z|={ctrl:.1f}")
    return ok, "; ".join(parts)


def check_a5():
    parts, ok = [], True
    for name in BUILTIN:
        rep = moment_bounds(ExperimentPlan(problem=name, wz_levels=LEVELS, outer_count=32, inner_count=1024))
        ok &= rep.all_uniform
        parts.append(f"{name} ratio p2={rep.ratios[2]:.3f} p4={rep.ratios[4]:.3f}")
    return ok, "; ".join(parts) + " (bound 2.0)"


def check_a6():
    ns = list(range(3, 9))
    stats = modulus_curve(2024, 10_000, DyadicGrid(12), ns, p=2.0)
    slope = ols_slope(ns, np.log2(stats))
    return -1.15 <= slope <= -0.85, f"slope={slope:.4f} over n=3..8 (window [-1.15, -0.85])"


def check_a7():
    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        for w in (1, 4, 8):
            out = Path(tmp) / f"w{w}"
            code = cli_main(["simulate", "--problem", "tanh_g", "--levels", "3..5", "--outer", "8",
                             "--inner", "256", "--workers", str(w), "--out", str(out), "--no-timestamp"])
            if code != 0:
                return False, f"workers={w} exited {code}"
            outputs.append((out / "simulate.csv").read_bytes())
    same = all(o == outputs[0] for o in outputs)
    return same, f"CSV byte-identical across workers 1,4,8: {same}"


CHECKS = [
    ("A1", "closed-form error law", check_a1),
    ("A2", "rate bound", check_a2),
    ("A3", "exact coupling", check_a3),
    ("A4", "identity suite", check_a4),
    ("A5", "uniform moments", check_a5),
    ("A6", "modulus scaling", check_a6),
    ("A7", "determinism", check_a7),
]


def _line(tag, title, ok, detail):
    return f"{tag} {'PASS' if ok else 'FAIL'} {title}: {detail}"


@pytest.mark.parametrize("tag,title,check", CHECKS, ids=[c[0] for c in CHECKS])
def test_acceptance(tag, title, check, acceptance_log):
    ok, detail = check()
    line = _line(tag, title, ok, detail)
    acceptance_log.append(line)
    print(line)
    assert ok, line


if __name__ == "__main__":
    failed = 0
    for tag, title, check in CHECKS:
        ok, detail = check()
        failed += not ok
        print(_line(tag, title, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
