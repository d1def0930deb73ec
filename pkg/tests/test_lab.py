import math

import numpy as np
import pytest

from wzbdsde.engine import RegressionBasis
from wzbdsde.errors import ConfigurationError, NumericalError, RateUndefinedError
from wzbdsde.lab import (
    CONTROL,
    IDENTITIES,
    ConvergenceReport,
    ExperimentPlan,
    LevelEstimate,
    estimate_errors,
    fit_rate,
    identity_suite,
    moment_bounds,
)


def _report(values, ns=(3, 4, 5)):
    levels = [LevelEstimate(n, n + 2, v, 0.0, 0, 0.0, 0.0) for n, v in zip(ns, values)]
    return ConvergenceReport("x", 0, 2, 2, levels)


def test_fit_rate_examples():
    assert fit_rate(_report([2.0**-3, 2.0**-4, 2.0**-5])) == pytest.approx(-1.0, abs=1e-14)
    assert fit_rate(_report([0.3, 0.3, 0.3])) == 0.0
    with pytest.raises(RateUndefinedError, match=r"\[4\]"):
        fit_rate(_report([0.1, 0.0, 0.01]))
    with pytest.raises(RateUndefinedError):
        fit_rate(_report([0.1, 0.01], ns=(3, 4)))


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        ExperimentPlan(extra_levels=-1)
    with pytest.raises(ConfigurationError):
        ExperimentPlan(wz_levels=())
    with pytest.raises(ConfigurationError):
        ExperimentPlan(delta_slack=0.5)
    with pytest.raises(ConfigurationError):
        ExperimentPlan(horizon=0.3)
    plan = ExperimentPlan(wz_levels=[3, 5], extra_levels=1, grid="per_level")
    assert plan.fine_level == 6 and plan.solver_level(3) == 4
    assert plan.groups() == [(4, [3]), (6, [5])]


def test_single_outer_path_has_no_standard_error():
    with pytest.raises(NumericalError):
        estimate_errors(ExperimentPlan(problem="const_g", outer_count=1, inner_count=64, wz_levels=(3,)))


def test_zero_g_errors_exactly_zero():
    rep = estimate_errors(ExperimentPlan(problem="zero_g", outer_count=3, inner_count=128, wz_levels=(2, 3, 4)))
    assert all(lv.sup_y_err2 == 0.0 and lv.z_err_int == 0.0 for lv in rep.levels)
    assert rep.slope is None


def test_const_g_error_law():
    plan = ExperimentPlan(problem="const_g", outer_count=32, inner_count=256, wz_levels=(3, 4, 5),
                          basis=RegressionBasis("polynomial", 1, ridge=1e-10))
    rep = estimate_errors(plan)
    for lv in rep.levels:
        assert abs(lv.sup_y_err2 - 0.25 * 2.0**-lv.n) <= 4 * lv.sup_y_err2_se + 1e-6
        assert lv.z_err_int <= 1e-11
        assert lv.sup_y_err2 + lv.z_err_int == lv.composite
    assert -1.5 <= rep.slope <= -0.5


def test_sine_g_errors_positive_and_decreasing():
    rep = estimate_errors(ExperimentPlan(problem="sine_g", outer_count=16, inner_count=512))
    comps = [lv.composite for lv in rep.levels]
    assert all(c > 0 for c in comps)
    for a, b in zip(rep.levels, rep.levels[1:]):
        slack = 3 * math.hypot(a.sup_y_err2_se + a.z_err_int_se, b.sup_y_err2_se + b.z_err_int_se)
        assert b.composite <= a.composite + slack
    assert rep.slope < 0


def test_worker_count_invariance():
    plan = ExperimentPlan(problem="tanh_g", outer_count=4, inner_count=128, wz_levels=(2, 3, 4))
    a = estimate_errors(plan, workers=1).to_dict()
    b = estimate_errors(plan, workers=3).to_dict()
    assert a == b


def test_inner_refinement_stability():
    small = estimate_errors(ExperimentPlan(problem="sine_g", outer_count=16, inner_count=512, wz_levels=(3, 4, 5)))
    large = estimate_errors(ExperimentPlan(problem="sine_g", outer_count=16, inner_count=1024, wz_levels=(3, 4, 5)))
    for a, b in zip(small.levels, large.levels):
        se = max(a.sup_y_err2_se, b.sup_y_err2_se)
        assert abs(a.sup_y_err2 - b.sup_y_err2) <= 5 * se


def test_per_level_grid():
    rep = estimate_errors(ExperimentPlan(problem="const_g", grid="per_level", outer_count=4, inner_count=128,
                                         wz_levels=(2, 3), basis=RegressionBasis("polynomial", 1)))
    assert [lv.m for lv in rep.levels] == [4, 5]


def test_identities_trivial_for_zero_g():
    rep = identity_suite(ExperimentPlan(problem="zero_g", outer_count=3, inner_count=64, wz_levels=(3,)))
    assert len(rep.entries) == len(IDENTITIES) + 1
    assert all(e.trivial and e.passed and e.estimate == 0 for e in rep.entries)


def test_identities_const_g():
    rep = identity_suite(ExperimentPlan(problem="const_g", outer_count=64, inner_count=1024, wz_levels=(4,)))
    assert rep.all_passed
    ctrl = [e for e in rep.entries if e.name == CONTROL]
    assert all(abs(e.z) > 3 for e in ctrl) and rep.control_detected
    for e in rep.entries:
        assert e.passed == (abs(e.estimate) <= 3 * e.se)


def test_moments_zero_g_exactly_uniform():
    rep = moment_bounds(ExperimentPlan(problem="zero_g", outer_count=3, inner_count=128, wz_levels=(2, 3, 4)))
    assert rep.ratios == {2: 1.0, 4: 1.0} and rep.all_uniform


def test_moments_constant_solution():
    from wzbdsde.problem import REGISTRY

    plan = ExperimentPlan(problem="affine", problem_params={"xi_scale": 0.0, "xi_shift": 1.0},
                          outer_count=2, inner_count=32, wz_levels=(2, 3))
    assert REGISTRY["affine"]
    rep = moment_bounds(plan, [2])
    assert all(r.y_sup_moment == 1.0 for r in rep.rows)


def test_moments_sine_g_uniform():
    rep = moment_bounds(ExperimentPlan(problem="sine_g", outer_count=8, inner_count=512))
    assert rep.all_uniform
    assert set(rep.ratios) == {2, 4}


def test_moments_p_list_validated():
    with pytest.raises(ConfigurationError):
        moment_bounds(ExperimentPlan(outer_count=2, inner_count=16), [3])
