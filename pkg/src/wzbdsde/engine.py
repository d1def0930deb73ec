"""Backward least-squares Monte Carlo solver for the reference and Wong-Zakai equations.

The outer B path is frozen: under the information at time ``t_i`` every B
increment on ``[t_i, T]`` is a known number, so conditional expectations reduce
to regressions over an ensemble of inner W paths.

Both schemes share one step,

    y_i = E[y_{i+1} + g(y_{i+1}) db + 1/2 g g'(y_{i+1}) q | W_{t_i}] + f(y_i, z_i) dt,

and differ only in ``(db, q)``:

* reference: ``db = B_{t_{i+1}} - B_{t_i}`` (right-endpoint backward Ito sum) and
  ``q = dt``, the correction drift;
* Wong-Zakai: ``db = slope * dt`` with the interpolation slope, and ``q = db**2``
  (second-order Taylor step of the random ODE; ``wz_order=1`` sets ``q = 0``).

Conditional expectations default to "regression later": ``y_{i+1}`` is fitted on
basis functions of ``W_{t_{i+1}}`` and the fitted basis is integrated exactly
against the Gaussian transition, which also yields ``z_i`` through
``E[h(W_{i+1}) dW_i | W_i] = dt E[h'(W_{i+1}) | W_i]``. ``method="now"`` is the
classical regression of targets on basis functions of ``W_{t_i}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, NumericalBlowupError, RegressionError
from .noise import DyadicGrid, InterpolatedNoise, cumulative, fine_slopes
from .problem import BdsdeProblem

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _powers(u: np.ndarray, p: int) -> np.ndarray:
    out = np.empty((u.size, p))
    if p:
        out[:, 0] = 1.0
    for k in range(1, p):
        np.multiply(out[:, k - 1], u, out=out[:, k])
    return out


def _double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


@dataclass(frozen=True)
class RegressionBasis:
    """Basis in the standardized feature ``u = w / scale``.

    ``polynomial``: ``1, u, ..., u^d``. ``piecewise_linear``: ``1, u`` and hinges
    ``(u - a_j)^+`` at ``bins - 1`` knots evenly spaced in ``(-2, 2)``.
    """

    kind: str = "polynomial"
    degree_or_bins: int = 3
    ridge: float = 1e-8
    method: str = "later"

    def __post_init__(self):
        if self.kind not in ("polynomial", "piecewise_linear"):
            raise ConfigurationError(f"unknown basis kind {self.kind!r}")
        if self.method not in ("later", "now"):
            raise ConfigurationError(f"unknown regression method {self.method!r}")
        if self.degree_or_bins < (0 if self.kind == "polynomial" else 1):
            raise ConfigurationError(f"invalid basis size {self.degree_or_bins}")
        if not self.ridge >= 0:
            raise ConfigurationError("ridge must be >= 0")

    @property
    def dimension(self) -> int:
        return self.degree_or_bins + 1

    def knots(self) -> np.ndarray:
        b = self.degree_or_bins
        return -2.0 + 4.0 * np.arange(1, b) / b

    def design(self, x: np.ndarray, scale: float = 1.0) -> np.ndarray:
        u = np.asarray(x, dtype=float) / scale
        if self.kind == "polynomial":
            return _powers(u, self.dimension)
        cols = [np.ones_like(u), u] + [np.maximum(u - a, 0.0) for a in self.knots()]
        return np.stack(cols[: self.dimension], axis=1)

    def transition_moments(self, x: np.ndarray, var: float, scale: float) -> tuple[np.ndarray, np.ndarray]:
        """``E[phi_k(x + eta)]`` and ``E[phi_k'(x + eta)]`` for ``eta ~ N(0, var)``.

        Derivatives are with respect to the unscaled feature.
        """
        u = np.asarray(x, dtype=float) / scale
        v = var / scale**2
        p = self.dimension
        if self.kind == "polynomial":
            powers = _powers(u, p)
            # E[(u + e)^k] = sum over even j of C(k, j) u^(k-j) (j-1)!! v^(j/2)
            mix = np.zeros((p, p))
            for k in range(p):
                for j in range(0, k + 1, 2):
                    mix[k - j, k] = math.comb(k, j) * _double_factorial(j - 1) * v ** (j // 2)
            mean = powers @ mix
            grad = np.zeros_like(mean)
            grad[:, 1:] = mean[:, :-1] * (np.arange(1, p) / scale)
            return mean, grad
        sd = math.sqrt(v)
        mean = np.empty((u.size, p))
        grad = np.empty((u.size, p))
        mean[:, 0], grad[:, 0] = 1.0, 0.0
        mean[:, 1], grad[:, 1] = u, 1.0 / scale
        for j, a in enumerate(self.knots()[: p - 2], start=2):
            d = u - a
            if sd == 0:
                mean[:, j] = np.maximum(d, 0.0)
                grad[:, j] = (d > 0) / scale
            else:
                s = d / sd
                cdf = ndtr(s)
                mean[:, j] = d * cdf + sd * np.exp(-0.5 * s * s) / _SQRT_2PI
                grad[:, j] = cdf / scale
        return mean, grad


class Projector:
    """Ridge least-squares projection onto the columns of one design matrix.

    Columns are equilibrated to unit root-mean-square, all-zero columns are
    dropped (their coefficients are zero), and the leading constant column is
    not penalized. Each target is mapped with a separate matrix-vector product
    so that identical targets give bitwise-identical coefficients.
    """

    def __init__(self, design: np.ndarray, ridge: float):
        a = np.asarray(design, dtype=float)
        n, p = a.shape
        if n < 1:
            raise RegressionError("regression needs at least one sample")
        rms = np.sqrt(np.mean(a * a, axis=0))
        active = np.flatnonzero(rms > 0)
        if n < active.size:
            raise RegressionError(
                f"{n} samples cannot identify {active.size} basis coefficients"
            )
        a_s = a[:, active] / rms[active]
        gram = a_s.T @ a_s / n
        pen = np.full(active.size, ridge)
        if active.size and active[0] == 0:
            pen[0] = 0.0
        gram[np.diag_indices_from(gram)] += pen
        eig = np.linalg.eigvalsh(gram)
        if eig.size and eig[0] <= 1e-13 * max(eig[-1], 1.0):
            if ridge == 0:
                raise RegressionError(
                    "design matrix is rank deficient; use ridge > 0"
                )
            raise RegressionError("design matrix is numerically singular even with ridge")
        self.p = p
        self.active = active
        self.design = a
        self._map = np.linalg.solve(gram, a_s.T / n) / rms[active][:, None]
        self._const = a[0, 0] if active.size and active[0] == 0 and np.all(a[:, 0] == a[0, 0]) else None

    def coefficients(self, target: np.ndarray) -> np.ndarray:
        beta = np.zeros(self.p)
        t = np.asarray(target, dtype=float)
        if self._const is not None and t.size and np.all(t == t.flat[0]):
            # constants lie in the span and the intercept is unpenalized: exact
            beta[0] = t.flat[0] / self._const
            return beta
        beta[self.active] = self._map @ t
        return beta


def feature_scale(x: np.ndarray) -> float:
    rms = float(np.sqrt(np.mean(np.square(x))))
    return rms if rms > 0 else 1.0


def condexp_regress(
    targets: np.ndarray,
    features: np.ndarray,
    basis: RegressionBasis,
    scale: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Ridge projection of ``targets`` onto ``basis`` evaluated at ``features``.

    Coefficients refer to the basis in ``u = features / scale``. Conditioning
    does not depend on ``scale`` because the projector equilibrates columns.
    """
    x = np.asarray(features, dtype=float)
    design = basis.design(x, scale)
    beta = Projector(design, basis.ridge).coefficients(targets)
    return beta, design @ beta


@dataclass(frozen=True)
class ConditioningContext:
    """Information available at solver time ``t_i``.

    ``w_values`` are the inner-path values ``W_{t_i}``; ``b_future`` holds the
    frozen B increments on ``[t_i, T]`` (``b_future[0]`` is the next step).
    """

    time_index: int
    time: float
    w_values: np.ndarray
    b_future: np.ndarray


class StepRegression:
    """Per-step regression machinery shared by every scheme at one time index."""

    def __init__(self, ctx: ConditioningContext, dw: np.ndarray, basis: RegressionBasis, dt: float):
        self.basis = basis
        self.dt = dt
        self.dw = np.asarray(dw, dtype=float)
        w = np.asarray(ctx.w_values, dtype=float)
        if basis.method == "later":
            scale = math.sqrt(ctx.time + dt)
            self.projector = Projector(basis.design(w + self.dw, scale), basis.ridge)
            self.mean_map, self.grad_map = basis.transition_moments(w, dt, scale)
        else:
            scale = feature_scale(w)
            self.projector = Projector(basis.design(w, scale), basis.ridge)
            self.mean_map = self.projector.design
            self.grad_map = None

    def expect(self, target: np.ndarray) -> np.ndarray:
        return self.mean_map @ self.projector.coefficients(target)

    def expect_with_z(self, y_next: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        beta = self.projector.coefficients(y_next)
        y_hat = self.mean_map @ beta
        if self.grad_map is not None:
            return y_hat, self.grad_map @ beta
        z = self.mean_map @ self.projector.coefficients((y_next - y_hat) * self.dw) / self.dt
        return y_hat, z


def _step(
    reg: StepRegression,
    y_next: np.ndarray,
    db: float,
    q: float,
    problem: BdsdeProblem,
    picard_iters: int,
    time_index: int,
) -> tuple[np.ndarray, np.ndarray]:
    dt = reg.dt
    g = problem.diffusion
    y_hat, z = reg.expect_with_z(y_next)
    gy = g(y_next)
    target = y_next + gy * db + 0.5 * gy * g.derivative(y_next) * q
    base = reg.expect(target)
    f = problem.driver
    y = base + f(y_hat, z) * dt
    for _ in range(picard_iters):
        y = base + f(y, z) * dt
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
        raise NumericalBlowupError(f"non-finite solution at time index {time_index}")
    return y, z


def _regression_for(ctx, dw, basis, dt, reg):
    return reg if reg is not None else StepRegression(ctx, dw, basis, dt)


def step_reference(
    ctx: ConditioningContext,
    y_next: np.ndarray,
    dw: np.ndarray,
    problem: BdsdeProblem,
    basis: RegressionBasis,
    dt: float,
    picard_iters: int = 1,
    reg: Optional[StepRegression] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One backward step of the reference equation.

    The B increment is ``ctx.b_future[0]``, a known constant at ``t_i``.
    """
    reg = _regression_for(ctx, dw, basis, dt, reg)
    return _step(reg, y_next, float(ctx.b_future[0]), dt, problem, picard_iters, ctx.time_index)


def step_wongzakai(
    ctx: ConditioningContext,
    y_next: np.ndarray,
    dw: np.ndarray,
    slope: float,
    problem: BdsdeProblem,
    basis: RegressionBasis,
    dt: float,
    picard_iters: int = 1,
    reg: Optional[StepRegression] = None,
    wz_order: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """One backward step of the Wong-Zakai equation with constant ``slope``."""
    reg = _regression_for(ctx, dw, basis, dt, reg)
    db = slope * dt
    return _step(reg, y_next, db, db * db if wz_order == 2 else 0.0, problem, picard_iters, ctx.time_index)


REFERENCE = "reference"


def scheme_name(level: Optional[int]) -> str:
    return REFERENCE if level is None else f"wong_zakai({level})"


@dataclass(frozen=True, eq=False)
class BackwardSolution:
    """Solution arrays indexed ``[time index][inner path]``."""

    scheme: str
    grid_level: int
    y: np.ndarray
    z: np.ndarray
    outer_b_index: int = 0

    @property
    def wz_level(self) -> Optional[int]:
        if self.scheme == REFERENCE:
            return None
        return int(self.scheme[len("wong_zakai(") : -1])


def iterate_coupled(
    problem: BdsdeProblem,
    b_increments: np.ndarray,
    inner_w: np.ndarray,
    grid_level: int,
    schemes: Sequence[Optional[int]],
    basis: RegressionBasis,
    picard_iters: int = 1,
    wz_order: int = 2,
    noise: Optional[dict] = None,
) -> Iterator[tuple[int, dict]]:
    """Run several schemes backward in lockstep on one noise sample.

    ``schemes`` lists ``None`` for the reference and integers for Wong-Zakai
    levels. Yields ``(i, {scheme: (y_i, z_i)})`` from ``i = K`` down to 0; at the
    terminal index ``z`` is a placeholder replaced by the caller's convention.
    ``noise`` optionally maps levels to prebuilt :class:`InterpolatedNoise`.
    """
    grid = DyadicGrid(grid_level, problem.horizon)
    K, dt = grid.count, grid.mesh
    dw = np.asarray(inner_w, dtype=float)
    db = np.asarray(b_increments, dtype=float)
    if dw.ndim != 2 or dw.shape[1] != K or db.shape != (K,):
        raise ConfigurationError(f"noise arrays do not match a level-{grid_level} grid")
    n_paths = dw.shape[0]
    if n_paths <= basis.dimension:
        raise RegressionError(
            f"{n_paths} inner paths do not exceed the basis dimension {basis.dimension}"
        )
    slopes = {}
    for n in schemes:
        if n is None:
            continue
        if n > grid_level:
            raise ConfigurationError(f"Wong-Zakai level {n} exceeds solver level {grid_level}")
        nz = (noise or {}).get(n)
        if nz is None:
            nz = _noise_from_increments(db, grid, n)
        slopes[n] = fine_slopes(nz, grid_level)

    w_vals = cumulative(dw)
    y_T = np.asarray(problem.terminal(w_vals[:, K]), dtype=float)
    zero = np.zeros(n_paths)
    state = {n: y_T for n in schemes}
    yield K, {n: (y_T, zero) for n in schemes}
    for i in range(K - 1, -1, -1):
        ctx = ConditioningContext(i, i * dt, w_vals[:, i], db[i:])
        reg = StepRegression(ctx, dw[:, i], basis, dt)
        out = {}
        for n in schemes:
            if n is None:
                yz = step_reference(ctx, state[n], dw[:, i], problem, basis, dt, picard_iters, reg)
            else:
                yz = step_wongzakai(
                    ctx, state[n], dw[:, i], slopes[n][i], problem, basis, dt, picard_iters, reg, wz_order
                )
            out[n] = yz
            state[n] = yz[0]
        yield i, out


def _noise_from_increments(db: np.ndarray, grid: DyadicGrid, level: int) -> InterpolatedNoise:
    from .noise import BrownianPair

    pair = BrownianPair(grid, np.zeros_like(db), db, 0, 0)
    return InterpolatedNoise(pair, level)


def solve_coupled(
    problem: BdsdeProblem,
    b_increments: np.ndarray,
    inner_w: np.ndarray,
    grid_level: int,
    schemes: Sequence[Optional[int]],
    basis: RegressionBasis,
    picard_iters: int = 1,
    outer_b_index: int = 0,
    wz_order: int = 2,
) -> dict:
    """Full solutions of several schemes sharing each step's regression."""
    K = DyadicGrid(grid_level, problem.horizon).count
    n_paths = np.shape(inner_w)[0]
    ys = {n: np.empty((K + 1, n_paths)) for n in schemes}
    zs = {n: np.empty((K + 1, n_paths)) for n in schemes}
    for i, out in iterate_coupled(
        problem, b_increments, inner_w, grid_level, schemes, basis, picard_iters, wz_order
    ):
        for n, (y, z) in out.items():
            ys[n][i] = y
            zs[n][i] = z
    result = {}
    for n in schemes:
        z = zs[n]
        z[K] = z[K - 1]
        result[n] = BackwardSolution(scheme_name(n), grid_level, ys[n], z, outer_b_index)
    return result


def solve(
    problem: BdsdeProblem,
    b_increments: np.ndarray,
    inner_w: np.ndarray,
    scheme: Optional[int],
    grid_level: int,
    basis: RegressionBasis = RegressionBasis(),
    picard_iters: int = 1,
    outer_b_index: int = 0,
    wz_order: int = 2,
) -> BackwardSolution:
    """Solve one scheme (``None`` = reference, ``n`` = Wong-Zakai level n)."""
    return solve_coupled(
        problem, b_increments, inner_w, grid_level, [scheme], basis, picard_iters, outer_b_index, wz_order
    )[scheme]
