"""Poisson random measures on [0, T] x marks, controlled (thinned) versions,
and the change-of-measure weights used for importance sampling.

Random streams come from :class:`SeededRng`, a thin wrapper around numpy's
PCG64 generator seeded through ``SeedSequence``.  Child streams for parallel
workers are derived as ``SeedSequence(seed, spawn_key=(index,))``, so the
stream for chunk ``k`` depends only on ``(seed, k)`` and never on how many
workers run.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .measure import ControlFunction, MarkMeasure, TimeGrid

RNG_ALGORITHM = "numpy.PCG64/SeedSequence"


class DegenerateWeightError(ValueError):
    """A sampled point sits in a bin where the tilted intensity vanishes."""


class SeededRng:
    """Explicitly seeded random stream; same seed, same draws."""

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.spawn_key = tuple(int(k) for k in spawn_key)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed, spawn_key=self.spawn_key))
        )

    def child(self, index: int) -> SeededRng:
        return SeededRng(self.seed, self.spawn_key + (int(index),))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, spawn_key={self.spawn_key})"


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Finite point configuration: sorted jump times and their mark cells."""

    times: np.ndarray
    cells: np.ndarray
    T: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        cells = np.asarray(self.cells, dtype=int)
        if times.shape != cells.shape or times.ndim != 1:
            raise ValueError("times and cells must be 1-D arrays of equal length")
        if times.size:
            if times.min() < 0 or times.max() > self.T:
                raise ValueError("point times must lie in [0, T]")
            if np.any(np.diff(times) < 0):
                raise ValueError("point times must be nondecreasing")
            if cells.min() < 0:
                raise ValueError("negative cell index")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def empty(cls, T: float) -> PointPattern:
        return cls(np.empty(0), np.empty(0, dtype=int), T)

    def __len__(self):
        return int(self.times.size)

    def bin_counts(self, grid: TimeGrid, n_cells: int) -> np.ndarray:
        counts = np.zeros((grid.n_steps, n_cells), dtype=np.int64)
        if len(self):
            if self.cells.max() >= n_cells:
                raise ValueError("cell index out of range for mark measure")
            np.add.at(counts, (grid.interval_of(self.times), self.cells), 1)
        return counts

    def merge(self, other: PointPattern) -> PointPattern:
        times = np.concatenate([self.times, other.times])
        cells = np.concatenate([self.cells, other.cells])
        order = np.argsort(times, kind="stable")
        return PointPattern(times[order], cells[order], max(self.T, other.T))

    def to_json(self) -> list[dict]:
        return [{"t": float(t), "cell": int(c)} for t, c in zip(self.times, self.cells)]

    @classmethod
    def from_json(cls, data, T: float) -> PointPattern:
        if not data:
            return cls.empty(T)
        return cls([p["t"] for p in data], [p["cell"] for p in data], T)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _pattern_from_counts(grid: TimeGrid, counts: np.ndarray, gen: np.random.Generator) -> PointPattern:
    total = int(counts.sum())
    if total == 0:
        return PointPattern.empty(grid.T)
    flat = counts.ravel()
    bins = np.repeat(np.arange(flat.size), flat)
    interval, cell = np.divmod(bins, counts.shape[1])
    times = (interval + gen.random(total)) * grid.dt
    times = np.minimum(times, grid.T)
    order = np.argsort(times, kind="stable")
    return PointPattern(times[order], cell[order], grid.T)


def sample_prm(marks: MarkMeasure, grid: TimeGrid, rng: SeededRng) -> PointPattern:
    """Poisson random measure with intensity Lebesgue x ``marks`` on [0, T]."""
    marks.require_cells()
    if marks.total_mass == 0:
        return PointPattern.empty(grid.T)
    return sample_controlled_prm(ControlFunction.constant(grid, marks, 1.0), rng)


def sample_controlled_prm(g: ControlFunction, rng: SeededRng, *, intensity_scale: float = 1.0,
                          literal_thinning: bool = False) -> PointPattern:
    """Sample N^g: bin counts are Poisson(scale * g * mass * dt).

    With ``literal_thinning`` the points are produced by drawing a Poisson
    measure on time x mark x [0, r_max] and keeping those with r <= g, which
    is the same law reached the long way round.
    """
    g.marks.require_cells()
    gen = rng.generator
    if not literal_thinning:
        counts = gen.poisson(g.bin_intensity(intensity_scale))
        return _pattern_from_counts(g.grid, counts, gen)

    r_max = float(g.values.max()) if g.values.size else 0.0
    if r_max == 0.0:
        return PointPattern.empty(g.grid.T)
    base = gen.poisson(intensity_scale * r_max * g.marks.masses[None, :] * g.grid.dt
                       * np.ones_like(g.values))
    pattern = _pattern_from_counts(g.grid, base, gen)
    if not len(pattern):
        return pattern
    r = gen.random(len(pattern)) * r_max
    level = g.values[g.grid.interval_of(pattern.times), pattern.cells]
    keep = r <= level
    return PointPattern(pattern.times[keep], pattern.cells[keep], g.grid.T)


def sample_small_noise_prm(epsilon: float, g: ControlFunction, rng: SeededRng) -> PointPattern:
    """Sample N^{g/epsilon}; the epsilon amplitude is applied by the solver."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return sample_controlled_prm(g, rng, intensity_scale=1.0 / epsilon)


def log_likelihood_ratio_counts(counts: np.ndarray, g: ControlFunction,
                                intensity_scale: float = 1.0) -> np.ndarray:
    """log dP/dP^g from per-bin counts; ``counts`` may carry leading batch axes."""
    counts = np.asarray(counts)
    compensator = intensity_scale * float(np.sum((g.values - 1.0) * g.marks.masses[None, :])) * g.grid.dt
    hit = counts > 0
    zero_bins = g.values == 0
    if np.any(hit & zero_bins):
        raise DegenerateWeightError("point in a bin where the control vanishes")
    with np.errstate(divide="ignore"):
        log_g = np.where(zero_bins, 0.0, np.log(np.where(zero_bins, 1.0, g.values)))
    axes = (-2, -1)
    return compensator - np.sum(counts * log_g, axis=axes)


def likelihood_ratio(pattern: PointPattern, g: ControlFunction, intensity_scale: float = 1.0) -> float:
    """Radon-Nikodym weight dP/dP^g evaluated at ``pattern``.

    P is the Poisson law with intensity ``scale * nu_T`` and P^g the law with
    intensity ``scale * g * nu_T``; the weight turns N^g-samples into
    unbiased estimates of P-expectations:
    exp(scale * sum (g-1) mass dt) / prod_points g(point).
    """
    counts = pattern.bin_counts(g.grid, g.marks.n_cells)
    return float(np.exp(log_likelihood_ratio_counts(counts, g, intensity_scale)))


def sample_bin_counts(g: ControlFunction, rng: SeededRng, n: int,
                      intensity_scale: float = 1.0) -> np.ndarray:
    """Batch of ``n`` independent bin-count arrays, shape (n, n_steps, n_cells)."""
    lam = g.bin_intensity(intensity_scale)
    return rng.generator.poisson(lam, size=(int(n),) + lam.shape)


def events_from_counts(grid: TimeGrid, counts: np.ndarray, rng: SeededRng):
    """Time-sorted padded event arrays for a batch of bin-count arrays.

    Returns ``(times, cells)`` of shape (n, K) where K is the largest number of
    points in any sample; unused slots hold ``inf`` and cell -1.
    """
    n = counts.shape[0]
    n_cells = counts.shape[2]
    per_sample = counts.reshape(n, -1)
    totals = per_sample.sum(axis=1)
    K = int(totals.max()) if n else 0
    times = np.full((n, K), np.inf)
    cells = np.full((n, K), -1, dtype=np.int64)
    if K == 0:
        return times, cells
    flat_counts = per_sample.ravel()
    bins = np.repeat(np.tile(np.arange(per_sample.shape[1]), n), flat_counts)
    owner = np.repeat(np.arange(n), totals)
    interval, cell = np.divmod(bins, n_cells)
    t = np.minimum((interval + rng.generator.random(bins.size)) * grid.dt, grid.T)
    order = np.lexsort((t, owner))
    owner, t, cell = owner[order], t[order], cell[order]
    starts = np.concatenate([[0], np.cumsum(totals)[:-1]])
    slot = np.arange(owner.size) - starts[owner]
    times[owner, slot] = t
    cells[owner, slot] = cell
    return times, cells
