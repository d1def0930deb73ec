"""Nested Monte Carlo experiments: error estimates, rate fits, identity and moment checks.

Each outer index ``b`` owns one B path and one inner ensemble of W paths, both
regenerated from ``(seed, b)``. Outer paths are independent work units whose
results land in per-index slots and are reduced in index order, so reports do
not depend on the worker count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import repeat
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import RegressionBasis, iterate_coupled, solve_coupled
from .errors import ConfigurationError, NumericalError, RateUndefinedError
from .noise import (
    DyadicGrid,
    InterpolatedNoise,
    BrownianPair,
    coarsen_increments,
    cumulative,
    fine_slopes,
    sample_ensemble,
    sample_pair,
)
from .problem import BdsdeProblem, make_problem

Z_THRESHOLD = 3.0
UNIFORM_RATIO = 2.0


@dataclass(frozen=True)
class ExperimentPlan:
    """Configuration of one nested Monte Carlo experiment.

    ``grid="shared"`` solves every level on one fine grid of level
    ``max(wz_levels) + extra_levels``; ``grid="per_level"`` uses level
    ``n + extra_levels`` for interpolation level n, with noise coarsened from
    the same finest sample.
    """

    problem: str = "sine_g"
    wz_levels: tuple = (3, 4, 5, 6, 7)
    extra_levels: int = 2
    outer_count: int = 64
    inner_count: int = 2048
    basis: RegressionBasis = RegressionBasis()
    seed: int = 42
    delta_slack: float = 0.1
    picard_iters: int = 1
    horizon: float = 1.0
    grid: str = "shared"
    wz_order: int = 2
    problem_params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "wz_levels", tuple(int(n) for n in self.wz_levels))
        self.validate()

    def validate(self) -> None:
        if not self.wz_levels:
            raise ConfigurationError("wz_levels must not be empty")
        if min(self.wz_levels) < 1:
            raise ConfigurationError("Wong-Zakai levels must be >= 1")
        if self.extra_levels < 0:
            raise ConfigurationError(
                f"extra_levels={self.extra_levels} would put the solver grid below level n"
            )
        if self.grid not in ("shared", "per_level"):
            raise ConfigurationError(f"grid must be 'shared' or 'per_level', got {self.grid!r}")
        for n in self.wz_levels:
            DyadicGrid(n, self.horizon)
        if self.outer_count < 1 or self.inner_count < 1:
            raise ConfigurationError("outer and inner counts must be positive")
        if not 0.0 < self.delta_slack < 0.5:
            raise ConfigurationError("delta_slack must lie in (0, 1/2)")
        if self.picard_iters < 0:
            raise ConfigurationError("picard_iters must be >= 0")
        if self.wz_order not in (1, 2):
            raise ConfigurationError("wz_order must be 1 or 2")

    @property
    def fine_level(self) -> int:
        return max(self.wz_levels) + self.extra_levels

    def solver_level(self, n: int) -> int:
        return self.fine_level if self.grid == "shared" else n + self.extra_levels

    def make_problem(self) -> BdsdeProblem:
        return make_problem(self.problem, horizon=self.horizon, **self.problem_params)

    def outer_noise(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        """B increments and inner W increments at the finest level for outer path b."""
        grid = DyadicGrid(self.fine_level, self.horizon)
        pair = sample_pair(self.seed, b, grid)
        return pair.b_increments, sample_ensemble(self.seed, b, self.inner_count, grid)

    def groups(self) -> list[tuple[int, list[int]]]:
        """``(solver level, interpolation levels)`` groups solved in one pass."""
        if self.grid == "shared":
            return [(self.fine_level, list(self.wz_levels))]
        return [(n + self.extra_levels, [n]) for n in self.wz_levels]


def _at_level(plan: ExperimentPlan, b_inc: np.ndarray, w_inc: np.ndarray, level: int):
    return (
        coarsen_increments(b_inc, plan.fine_level, level),
        coarsen_increments(w_inc, plan.fine_level, level),
    )


def _limited(task: Callable, plan: "ExperimentPlan", b: int):
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(1):
            return task(plan, b)
    except NumericalError as exc:
        levels = ",".join(str(n) for n in plan.wz_levels)
        raise type(exc)(f"outer path {b}, levels {levels}: {exc}") from exc


def default_workers() -> int:
    env = os.environ.get("BDSDE_WORKERS")
    if env:
        return int(env)
    return 1


def map_outer(task: Callable, plan: ExperimentPlan, workers: int = 1) -> list:
    """Evaluate ``task(plan, b)`` for every outer index, results in index order."""
    if workers == 0:
        workers = os.cpu_count() or 1
    indices = range(plan.outer_count)
    if workers <= 1 or plan.outer_count == 1:
        return [_limited(task, plan, b) for b in indices]
    chunk = max(1, plan.outer_count // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_limited, repeat(task), repeat(plan), indices, chunksize=chunk))


def _mean_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error over the leading (outer) axis."""
    m = samples.shape[0]
    if m < 2:
        raise NumericalError("standard errors need at least two outer paths")
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(m)


# --------------------------------------------------------------------------- errors


@dataclass
class LevelEstimate:
    n: int
    m: int
    sup_y_err2: float
    sup_y_err2_se: float
    sup_time_index: int
    z_err_int: float
    z_err_int_se: float

    @property
    def composite(self) -> float:
        return self.sup_y_err2 + self.z_err_int


@dataclass
class ConvergenceReport:
    problem: str
    seed: int
    outer: int
    inner: int
    levels: list
    slope: Optional[float] = None

    def composites(self) -> np.ndarray:
        return np.array([lv.composite for lv in self.levels])

    def to_dict(self) -> dict:
        d = asdict(self)
        for lv, row in zip(self.levels, d["levels"]):
            row["composite"] = lv.composite
        return d


def _error_task(plan: ExperimentPlan, b: int) -> dict:
    problem = plan.make_problem()
    b_inc, w_inc = plan.outer_noise(b)
    out = {}
    for level, wz in plan.groups():
        db, dw = _at_level(plan, b_inc, w_inc, level)
        grid = DyadicGrid(level, plan.horizon)
        K, dt = grid.count, grid.mesh
        ey = {n: np.zeros(K + 1) for n in wz}
        ez = {n: 0.0 for n in wz}
        for i, sol in iterate_coupled(
            problem, db, dw, level, [None] + wz, plan.basis, plan.picard_iters, plan.wz_order
        ):
            y_ref, z_ref = sol[None]
            for n in wz:
                y, z = sol[n]
                ey[n][i] = np.mean((y - y_ref) ** 2)
                if i < K:
                    ez[n] += dt * np.mean((z - z_ref) ** 2)
        for n in wz:
            out[n] = (level, ey[n], ez[n])
    return out


def estimate_errors(plan: ExperimentPlan, workers: int = 1) -> ConvergenceReport:
    """Error metric of each Wong-Zakai level against the reference solve.

    For level n: ``max_i mean_b mean_p (Y^n - Y)^2`` over solver times and
    ``mean_b sum_i dt mean_p (Z^n - Z)^2``, with standard errors across outer paths.
    """
    parts = map_outer(_error_task, plan, workers)
    levels = []
    for n in plan.wz_levels:
        m = parts[0][n][0]
        ey_mean, ey_se = _mean_se(np.stack([p[n][1] for p in parts]))
        ez_mean, ez_se = _mean_se(np.array([p[n][2] for p in parts]))
        i_star = int(np.argmax(ey_mean))
        levels.append(
            LevelEstimate(
                n=n,
                m=m,
                sup_y_err2=float(ey_mean[i_star]),
                sup_y_err2_se=float(ey_se[i_star]),
                sup_time_index=i_star,
                z_err_int=float(ez_mean),
                z_err_int_se=float(ez_se),
            )
        )
    report = ConvergenceReport(plan.problem, plan.seed, plan.outer_count, plan.inner_count, levels)
    try:
        report.slope = fit_rate(report)
    except RateUndefinedError:
        report.slope = None
    return report


def ols_slope(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def fit_rate(report: ConvergenceReport) -> float:
    """Least-squares slope of ``log2(composite)`` against n."""
    ns = [lv.n for lv in report.levels]
    vals = report.composites()
    bad = [n for n, v in zip(ns, vals) if not v > 0]
    if bad:
        raise RateUndefinedError(f"nonpositive error estimates at levels {bad}")
    if len(set(ns)) < 3:
        raise RateUndefinedError("a rate fit needs at least three distinct levels")
    return ols_slope(ns, np.log2(vals))


# --------------------------------------------------------------------------- identities

IDENTITIES = (
    "dW_increment_conditional_mean",
    "future_cross_increment",
    "compensated_square_increment",
    "mixed_increment_product",
)
CONTROL = "uncompensated_square_control"


@dataclass
class IdentityEntry:
    name: str
    n: int
    estimate: float
    se: float
    z: float
    passed: bool
    trivial: bool
    control: bool = False


@dataclass
class IdentityReport:
    problem: str
    seed: int
    outer: int
    inner: int
    entries: list

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries if not e.control)

    @property
    def control_detected(self) -> bool:
        return all(not e.passed for e in self.entries if e.control)

    def to_dict(self) -> dict:
        return asdict(self)


def identity_samples(
    problem: BdsdeProblem,
    y_ref: np.ndarray,
    y_wz: np.ndarray,
    z_wz: np.ndarray,
    dw: np.ndarray,
    db: np.ndarray,
    n: int,
    level: int,
) -> dict:
    """Per-inner-path summands of the zero-mean identities at interpolation level n.

    Arrays ``y_*``/``z_*`` are ``[time][path]`` on the level-``level`` grid,
    ``dw`` is ``[path][step]`` and ``db`` the B increments on that grid.
    Stochastic integrals against W use left-point (Ito) sums.
    """
    g = problem.diffusion
    grid = DyadicGrid(level, problem.horizon)
    K, dt = grid.count, grid.mesh
    r = 1 << (level - n)
    Kn = K // r
    b_vals = cumulative(db)
    nodes = b_vals[:: r]  # B at k / 2^n, k = 0..Kn

    def node(k):
        return nodes[np.minimum(k, Kn)]

    nz = InterpolatedNoise(BrownianPair(grid, np.zeros(K), db, 0, 0), n)
    slopes = fine_slopes(nz, level)

    # Z dW over [s, s+): left-point sums through path-wise prefix sums
    prefix = np.zeros((K + 1, y_wz.shape[1]))
    np.cumsum(z_wz[:K] * dw.T, axis=0, out=prefix[1:])
    i = np.arange(K)
    s_plus_idx = np.minimum((i // r + 2) * r, K)
    inner = prefix[s_plus_idx] - prefix[i]
    dw_term = dt * np.sum(g(y_wz[:K]) * slopes[:, None] * inner, axis=0)

    k = np.arange(max(Kn - 1, 0))
    at = (k + 2) * r
    inc_next = node(k + 2) - node(k + 1)
    g2 = g(y_wz[at]) ** 2
    cross = np.sum(g2 * ((node(k + 2) - node(k + 3)) * inc_next)[:, None], axis=0)
    sq = inc_next**2
    compensated = np.sum(g2 * (sq - math.ldexp(1.0, -n))[:, None], axis=0)
    control = np.sum(g2 * sq[:, None], axis=0)

    # (B_s - B_{(k+1)/2^n}) over fine times s in [k/2^n, (k+1)/2^n), weight 2^n dt per s
    j = k[:, None] * r + np.arange(r)[None, :]
    offsets = b_vals[j] - node(k + 1)[:, None]
    weight = math.ldexp(dt, n) * offsets.sum(axis=1) * inc_next
    mixed = np.sum((g(y_ref[at]) * g(y_wz[at])) * weight[:, None], axis=0)
    return {
        IDENTITIES[0]: dw_term,
        IDENTITIES[1]: cross,
        IDENTITIES[2]: compensated,
        IDENTITIES[3]: mixed,
        CONTROL: control,
    }


def _identity_task(plan: ExperimentPlan, b: int) -> dict:
    problem = plan.make_problem()
    b_inc, w_inc = plan.outer_noise(b)
    out = {}
    for level, wz in plan.groups():
        db, dw = _at_level(plan, b_inc, w_inc, level)
        sols = solve_coupled(
            problem, db, dw, level, [None] + wz, plan.basis, plan.picard_iters, b, plan.wz_order
        )
        for n in wz:
            samples = identity_samples(problem, sols[None].y, sols[n].y, sols[n].z, dw, db, n, level)
            out[n] = {name: (v.mean(), bool(np.all(v == 0))) for name, v in samples.items()}
    return out


def identity_suite(plan: ExperimentPlan, workers: int = 1) -> IdentityReport:
    """z-tests of the zero-mean identities, clustered by outer path.

    Identically zero samples pass trivially and are flagged. The uncompensated
    control is expected to fail.
    """
    parts = map_outer(_identity_task, plan, workers)
    entries = []
    for n in plan.wz_levels:
        for name in IDENTITIES + (CONTROL,):
            means = np.array([p[n][name][0] for p in parts])
            trivial = all(p[n][name][1] for p in parts)
            est, se = _mean_se(means)
            est, se = float(est), float(se)
            if trivial:
                z = 0.0
            elif se > 0:
                z = est / se
            else:
                z = 0.0 if est == 0 else math.copysign(math.inf, est)
            entries.append(
                IdentityEntry(name, n, est, se, z, trivial or abs(z) <= Z_THRESHOLD, trivial, name == CONTROL)
            )
    return IdentityReport(plan.problem, plan.seed, plan.outer_count, plan.inner_count, entries)


# --------------------------------------------------------------------------- moments


@dataclass
class MomentRow:
    n: int
    p: int
    y_sup_moment: float
    y_sup_moment_se: float
    z_int_moment: float
    z_int_moment_se: float

    @property
    def combined(self) -> float:
        return self.y_sup_moment + self.z_int_moment


@dataclass
class MomentReport:
    problem: str
    seed: int
    outer: int
    inner: int
    rows: list
    ratios: dict
    max_over_n: dict
    uniform: dict

    @property
    def all_uniform(self) -> bool:
        return all(self.uniform.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        for row, rd in zip(self.rows, d["rows"]):
            rd["combined"] = row.combined
        return d


def _moment_task(plan: ExperimentPlan, b: int, p_list: tuple) -> dict:
    problem = plan.make_problem()
    b_inc, w_inc = plan.outer_noise(b)
    out = {}
    for level, wz in plan.groups():
        db, dw = _at_level(plan, b_inc, w_inc, level)
        K, dt = DyadicGrid(level, plan.horizon).count, DyadicGrid(level, plan.horizon).mesh
        sup_abs = {n: np.zeros(dw.shape[0]) for n in wz}
        z_int = {n: np.zeros(dw.shape[0]) for n in wz}
        for i, sol in iterate_coupled(problem, db, dw, level, wz, plan.basis, plan.picard_iters, plan.wz_order):
            for n in wz:
                y, z = sol[n]
                np.maximum(sup_abs[n], np.abs(y), out=sup_abs[n])
                if i < K:
                    z_int[n] += dt * z * z
        for n in wz:
            out[n] = {
                p: (float(np.mean(sup_abs[n] ** p)), float(np.mean(z_int[n] ** (p / 2)))) for p in p_list
            }
    return out


class _MomentTask:
    def __init__(self, p_list):
        self.p_list = tuple(p_list)

    def __call__(self, plan, b):
        return _moment_task(plan, b, self.p_list)


def moment_bounds(plan: ExperimentPlan, p_list: Sequence[int] = (2, 4), workers: int = 1) -> MomentReport:
    """Uniform-in-n moment estimates ``E[sup_t |Y^n|^p]`` and ``E[(int (Z^n)^2)^(p/2)]``.

    A level family counts as uniformly bounded when the largest combined
    moment over n is at most twice the smallest.
    """
    p_list = tuple(int(p) for p in p_list)
    if not p_list or any(p not in (2, 4) for p in p_list):
        raise ConfigurationError("p_list must be a nonempty subset of {2, 4}")
    parts = map_outer(_MomentTask(p_list), plan, workers)
    rows, ratios, max_over_n, uniform = [], {}, {}, {}
    for p in p_list:
        combined = []
        for n in plan.wz_levels:
            ym, yse = _mean_se(np.array([q[n][p][0] for q in parts]))
            zm, zse = _mean_se(np.array([q[n][p][1] for q in parts]))
            row = MomentRow(n, p, float(ym), float(yse), float(zm), float(zse))
            rows.append(row)
            combined.append(row.combined)
        hi, lo = max(combined), min(combined)
        ratios[p] = hi / lo if lo > 0 else (1.0 if hi == 0 else math.inf)
        max_over_n[p] = hi
        uniform[p] = bool(np.all(np.isfinite(combined))) and ratios[p] <= UNIFORM_RATIO
    return MomentReport(plan.problem, plan.seed, plan.outer_count, plan.inner_count, rows, ratios, max_over_n, uniform)
