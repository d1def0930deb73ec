"""Dyadic Brownian paths and their shifted piecewise-linear interpolation.

All randomness is drawn from counter-based Philox streams keyed by
``(seed, path_index, stream)``, so any path can be regenerated on any worker
without reference to scheduling. Paths are sampled once at the finest level
and coarsened by exact summation, which lets one noise realization serve
every interpolation level (common random numbers).

The interpolation at level ``n`` on ``[k/2^n, (k+1)/2^n]`` runs linearly from
``B_{(k+1)/2^n}`` to ``B_{(k+2)/2^n}``, i.e. it looks one interval ahead.
On the last interval the look-ahead value is clamped to ``B_T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import ConfigurationError, DomainError, InputError, LevelError

W_STREAM = 0
B_STREAM = 1
ENSEMBLE_STREAM = 2
EXTENSION_STREAM = 3


def philox_stream(seed: int, path_index: int, stream: int) -> np.random.Generator:
    """Independent generator for one ``(seed, path_index, stream)`` key."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(path_index), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DyadicGrid:
    """Uniform grid ``t_k = k 2^-level`` on ``[0, horizon]``."""

    level: int
    horizon: float = 1.0

    def __post_init__(self):
        if self.level < 0:
            raise ConfigurationError(f"grid level must be >= 0, got {self.level}")
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        scaled = math.ldexp(self.horizon, self.level)
        if scaled != math.floor(scaled):
            raise ConfigurationError(
                f"horizon {self.horizon} is not a multiple of 2^-{self.level}"
            )

    @property
    def count(self) -> int:
        return int(math.ldexp(self.horizon, self.level))

    @property
    def mesh(self) -> float:
        return math.ldexp(1.0, -self.level)

    def times(self) -> np.ndarray:
        return np.arange(self.count + 1) * self.mesh

    def at_level(self, level: int) -> "DyadicGrid":
        return DyadicGrid(level, self.horizon)


def cumulative(increments: np.ndarray) -> np.ndarray:
    """Path values from increments along the last axis, starting at 0."""
    inc = np.asarray(increments, dtype=float)
    out = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


@dataclass(frozen=True, eq=False)
class BrownianPair:
    """One sample of the independent drivers W and B on a dyadic grid."""

    grid: DyadicGrid
    w_increments: np.ndarray
    b_increments: np.ndarray
    seed: int
    path_index: int

    @property
    def w_values(self) -> np.ndarray:
        return cumulative(self.w_increments)

    @property
    def b_values(self) -> np.ndarray:
        return cumulative(self.b_increments)


def sample_pair(seed: int, path_index: int, grid: DyadicGrid) -> BrownianPair:
    if grid.count < 1:
        raise ConfigurationError("grid must contain at least one interval")
    sd = math.sqrt(grid.mesh)
    w = philox_stream(seed, path_index, W_STREAM).standard_normal(grid.count) * sd
    b = philox_stream(seed, path_index, B_STREAM).standard_normal(grid.count) * sd
    return BrownianPair(grid, w, b, int(seed), int(path_index))


def sample_ensemble(seed: int, outer_index: int, count: int, grid: DyadicGrid) -> np.ndarray:
    """``count`` independent W increment rows for one outer path.

    Drawn from a substream disjoint from every :func:`sample_pair` stream.
    """
    if count < 1:
        raise InputError("ensemble needs at least one path")
    rng = philox_stream(seed, outer_index, ENSEMBLE_STREAM)
    return rng.standard_normal((count, grid.count)) * math.sqrt(grid.mesh)


def coarsen_increments(increments: np.ndarray, from_level: int, to_level: int) -> np.ndarray:
    """Sum blocks of fine increments along the last axis, strictly left to right."""
    if to_level > from_level:
        raise LevelError(f"cannot coarsen level {from_level} to finer level {to_level}")
    if to_level < 0:
        raise LevelError(f"level must be >= 0, got {to_level}")
    inc = np.asarray(increments, dtype=float)
    ratio = 1 << (from_level - to_level)
    if ratio == 1:
        return inc.copy()
    if inc.shape[-1] % ratio:
        raise LevelError("increment count is not divisible by the coarsening ratio")
    blocks = inc.reshape(inc.shape[:-1] + (inc.shape[-1] // ratio, ratio))
    acc = blocks[..., 0].copy()
    for j in range(1, ratio):
        acc += blocks[..., j]
    return acc


def coarsen(path: BrownianPair, to_level: int, component: str = "b") -> np.ndarray:
    """Level-``to_level`` increments of one component (``"w"`` or ``"b"``)."""
    inc = path.b_increments if component == "b" else path.w_increments
    return coarsen_increments(inc, path.grid.level, to_level)


@dataclass(frozen=True, eq=False)
class InterpolatedNoise:
    """Level-``wz_level`` Wong-Zakai interpolation of a path's B component.

    With ``clamp=False`` the look-ahead value beyond the horizon is an extra
    independent increment drawn from the path's extension substream.
    """

    base: BrownianPair
    wz_level: int
    clamp: bool = True
    nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        grid = self.base.grid
        if self.wz_level < 0 or self.wz_level > grid.level:
            raise LevelError(
                f"interpolation level {self.wz_level} not in [0, {grid.level}]"
            )
        DyadicGrid(self.wz_level, grid.horizon)
        coarse = cumulative(coarsen(self.base, self.wz_level))
        if self.clamp:
            extra = coarse[-1]
        else:
            rng = philox_stream(self.base.seed, self.base.path_index, EXTENSION_STREAM)
            extra = coarse[-1] + rng.standard_normal() * math.sqrt(math.ldexp(1.0, -self.wz_level))
        # nodes[j] = B_{j/2^n} for j = 0..K+1
        object.__setattr__(self, "nodes", np.append(coarse, extra))

    @property
    def horizon(self) -> float:
        return self.base.grid.horizon

    @property
    def count(self) -> int:
        return len(self.nodes) - 2

    def interval(self, t: float) -> int:
        if not 0.0 <= t <= self.horizon:
            raise DomainError(f"t={t} outside [0, {self.horizon}]")
        return min(int(math.floor(math.ldexp(t, self.wz_level))), self.count - 1)

    def slopes(self) -> np.ndarray:
        """Per-interval derivative ``2^n (B_{(k+2)/2^n} - B_{(k+1)/2^n})``."""
        return math.ldexp(1.0, self.wz_level) * (self.nodes[2:] - self.nodes[1:-1])

    def values(self) -> np.ndarray:
        """Interpolation at the level-n grid times ``k/2^n``, k = 0..K."""
        return self.nodes[1:].copy()


def bn_value(noise: InterpolatedNoise, t: float, interval: int | None = None) -> float:
    """Evaluate the interpolation at ``t``.

    ``interval`` forces evaluation with a given interval's affine piece, which
    must contain ``t``; grid boundaries are then reproduced exactly.
    """
    k = noise.interval(t) if interval is None else interval
    n = noise.wz_level
    theta = math.ldexp(t, n) - k
    if not -1e-12 <= theta <= 1.0 + 1e-12:
        raise DomainError(f"t={t} not in interval {k} at level {n}")
    lo, hi = noise.nodes[k + 1], noise.nodes[k + 2]
    if theta <= 0.5:
        return float(lo + theta * (hi - lo))
    return float(hi - (1.0 - theta) * (hi - lo))


def bn_slope(noise: InterpolatedNoise, t: float) -> float:
    if not 0.0 <= t <= noise.horizon:
        raise DomainError(f"t={t} outside [0, {noise.horizon})")
    k = noise.interval(t)
    return float(math.ldexp(1.0, noise.wz_level) * (noise.nodes[k + 2] - noise.nodes[k + 1]))


def fine_slopes(noise: InterpolatedNoise, level: int) -> np.ndarray:
    """Interpolation slope on each step of the level-``level`` grid (``level >= n``)."""
    if level < noise.wz_level:
        raise LevelError("solver grid must be at least as fine as the interpolation")
    return np.repeat(noise.slopes(), 1 << (level - noise.wz_level))


def fine_values(noise: InterpolatedNoise, level: int) -> np.ndarray:
    """Interpolation evaluated at every level-``level`` grid time."""
    if level < noise.wz_level:
        raise LevelError("solver grid must be at least as fine as the interpolation")
    ratio = 1 << (level - noise.wz_level)
    K = noise.count
    theta = np.arange(ratio) / ratio
    lo, hi = noise.nodes[1:-1, None], noise.nodes[2:, None]
    inner = np.where(theta <= 0.5, lo + theta * (hi - lo), hi - (1.0 - theta) * (hi - lo))
    return np.append(inner.reshape(K * ratio), noise.nodes[K + 1])


def s_plus(t: float, n: int, horizon: float = 1.0, clamp: bool = True) -> float:
    """Right look-ahead point ``(k+2)/2^n`` of the interval containing ``t``."""
    if not 0.0 <= t <= horizon:
        raise DomainError(f"t={t} outside [0, {horizon}]")
    k = int(math.floor(math.ldexp(t, n)))
    value = math.ldexp(k + 2, -n)
    return min(value, horizon) if clamp else value


def s_minus(t: float, n: int, horizon: float = 1.0) -> float:
    """Left point ``(k-1)/2^n``, floored at 0."""
    if not 0.0 <= t <= horizon:
        raise DomainError(f"t={t} outside [0, {horizon}]")
    k = int(math.floor(math.ldexp(t, n)))
    return max(math.ldexp(k - 1, -n), 0.0)


def window_oscillation(values: np.ndarray, lag: int) -> np.ndarray:
    """Per row, ``max |x_i - x_j|`` over index pairs with ``|i - j| <= lag``."""
    x = np.atleast_2d(np.asarray(values, dtype=float))
    if lag <= 0 or x.shape[1] < 2:
        return np.zeros(x.shape[0])
    lag = min(lag, x.shape[1] - 1)
    # every full window [j, j + lag] is some centred window of size lag + 1;
    # edge-truncated windows are subsets and cannot exceed the true supremum
    hi = maximum_filter1d(x, lag + 1, axis=1, mode="nearest")
    lo = minimum_filter1d(x, lag + 1, axis=1, mode="nearest")
    return (hi - lo).max(axis=1)


def modulus_stat(paths: Sequence[BrownianPair], n: int, p: float) -> float:
    """Monte Carlo estimate of ``E[sup_{|r-s| <= 2^-n} |B_r - B_s|^p]``.

    The supremum runs over pairs of fine-grid times only, which biases the
    estimate downward relative to continuous time.
    """
    if len(paths) == 0:
        raise InputError("modulus_stat needs at least one path")
    level = paths[0].grid.level
    if any(q.grid != paths[0].grid for q in paths):
        raise InputError("all paths must share one grid")
    if n > level:
        raise LevelError(f"n={n} exceeds path level {level}")
    if p < 1:
        raise InputError("p must be >= 1")
    values = np.stack([q.b_values for q in paths])
    return modulus_from_values(values, level, n, p)


def modulus_from_values(values: np.ndarray, level: int, n: int, p: float) -> float:
    osc = window_oscillation(values, 1 << (level - n))
    return float(np.mean(osc**p))


def modulus_curve(
    seed: int, count: int, grid: DyadicGrid, levels: Sequence[int], p: float = 2.0, chunk: int = 1000
) -> np.ndarray:
    """:func:`modulus_stat` for each level over paths ``0..count-1``, in bounded memory."""
    if count < 1:
        raise InputError("modulus_curve needs at least one path")
    if any(n > grid.level for n in levels):
        raise LevelError(f"levels {list(levels)} exceed path level {grid.level}")
    totals = np.zeros(len(levels))
    for start in range(0, count, chunk):
        idx = range(start, min(start + chunk, count))
        values = np.stack([sample_pair(seed, i, grid).b_values for i in idx])
        for j, n in enumerate(levels):
            totals[j] += modulus_from_values(values, grid.level, n, p) * len(idx)
    return totals / count
