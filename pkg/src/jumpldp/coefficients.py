"""Drift and jump coefficients, pointwise evaluation, and hypothesis checkers.

Drifts act pointwise: directly on the coefficient vector for identity-basis
(finite dimensional) states, and on collocation samples of the field for the
sine basis, followed by projection back onto the modes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .measure import MarkMeasure
from .semigroup import SpectralGenerator

DRIFT_KINDS = ("zero", "linear", "tanh-monotone")
MODULATIONS = ("additive", "affine-bounded")


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    bound: float
    passed: bool
    note: str = ""

    def to_json(self) -> dict:
        return {"name": self.name, "value": _jsonable(self.value), "bound": _jsonable(self.bound),
                "pass": bool(self.passed), "note": self.note}


def _jsonable(x):
    x = float(x)
    if np.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


@dataclass(frozen=True)
class SamplerConfig:
    """Random states drawn uniformly from the box [-bound, bound]^d."""

    n_samples: int = 2000
    bound: float = 5.0
    seed: int = 0


@dataclass(frozen=True)
class DriftSpec:
    """f(u) applied pointwise.

    linear:        f(u) = c u              params: c
    tanh-monotone: f(u) = -a u - b tanh u  params: a, b >= 0
    zero:          f = 0

    ``M`` is the declared semimonotonicity constant and ``C`` the declared
    linear-growth constant; when omitted they default to the values the
    formula guarantees.
    """

    kind: str = "zero"
    c: float = 0.0
    a: float = 0.0
    b: float = 0.0
    M: float | None = None
    C: float | None = None

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.kind == "tanh-monotone" and (self.a < 0 or self.b < 0):
            raise ValueError("tanh-monotone drift requires a, b >= 0")
        if self.M is None:
            object.__setattr__(self, "M", max(self.c, 0.0) if self.kind == "linear" else 0.0)
        if self.C is None:
            object.__setattr__(self, "C", self._growth())
        if self.M < 0 or self.C < 0:
            raise ValueError("declared constants M and C must be nonnegative")

    def _growth(self) -> float:
        if self.kind == "linear":
            return abs(self.c)
        if self.kind == "tanh-monotone":
            return self.a + self.b
        return 0.0

    @property
    def is_linear(self) -> bool:
        return self.kind in ("zero", "linear")

    def pointwise(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "linear":
            return self.c * u
        return -self.a * u - self.b * np.tanh(u)

    def to_json(self) -> dict:
        params = {"zero": {}, "linear": {"c": self.c}, "tanh-monotone": {"a": self.a, "b": self.b}}
        return {"kind": self.kind, "params": params[self.kind], "M": self.M, "C": self.C}


def eval_drift(spec: DriftSpec, gen: SpectralGenerator, x) -> np.ndarray:
    """f(x) in coefficient space; ``x`` may be a batch with trailing axis d."""
    x = np.asarray(x, dtype=float)
    if spec.kind == "zero":
        return np.zeros_like(x)
    if spec.kind == "linear" or gen.basis == "identity":
        return spec.pointwise(x)
    return gen.from_field(spec.pointwise(gen.to_field(x)))


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Jump coefficient G(t, x, v_j) for a discretized mark space.

    additive:        G = sigma v_j dir_j
    affine-bounded:  G = sigma v_j dir_j (1 + kappa s / (1 + |s|)),  s = <x, dir_j>

    ``weights`` holds v_j and ``directions`` the rows dir_j.  ``M`` is the
    declared aggregate Lipschitz constant (defaults to sum_j mass_j ||G_j||_1^2).
    """

    sigma: float
    weights: np.ndarray
    directions: np.ndarray
    modulation: str = "additive"
    kappa: float = 0.0
    M: float | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        dirs = np.atleast_2d(np.array(self.directions, dtype=float))
        if dirs.shape[0] != w.size:
            raise ValueError("need one direction per mark cell")
        if self.modulation not in MODULATIONS:
            raise ValueError(f"unknown modulation {self.modulation!r}")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(dirs))):
            raise ValueError("diffusion weights and directions must be finite")
        w.setflags(write=False)
        dirs.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "directions", dirs)

    @classmethod
    def additive(cls, sigma: float, weights, directions) -> DiffusionSpec:
        return cls(sigma, weights, directions, "additive")

    @property
    def n_cells(self) -> int:
        return int(self.weights.size)

    @property
    def dim(self) -> int:
        return int(self.directions.shape[1])

    @property
    def is_additive(self) -> bool:
        return self.modulation == "additive" or self.kappa == 0.0 or self.sigma == 0.0

    @property
    def amplitudes(self) -> np.ndarray:
        """Rows sigma v_j dir_j, shape (cells, d)."""
        return (self.sigma * self.weights)[:, None] * self.directions

    def norm0_bounds(self) -> np.ndarray:
        base = np.abs(self.sigma * self.weights) * np.linalg.norm(self.directions, axis=1)
        if self.modulation == "affine-bounded":
            return base * (1.0 + self.kappa)
        return base

    def norm1_bounds(self) -> np.ndarray:
        if self.modulation == "additive":
            return np.zeros(self.n_cells)
        dn = np.linalg.norm(self.directions, axis=1)
        return np.abs(self.sigma * self.weights) * self.kappa * dn**2

    def lipschitz_constant(self, marks: MarkMeasure) -> float:
        if self.M is not None:
            return float(self.M)
        return float(np.sum(marks.masses * self.norm1_bounds() ** 2))

    def all_cells(self, t: float, x) -> np.ndarray:
        """G(t, x, v_j) for every cell; shape x.shape[:-1] + (cells, d)."""
        x = np.asarray(x, dtype=float)
        amp = self.amplitudes
        if self.is_additive:
            return np.broadcast_to(amp, x.shape[:-1] + amp.shape)
        s = x @ self.directions.T  # (..., cells)
        factor = 1.0 + self.kappa * s / (1.0 + np.abs(s))
        return factor[..., None] * amp

    def to_json(self) -> dict:
        return {
            "sigma": self.sigma, "kappa": self.kappa, "modulation": self.modulation, "M": self.M,
            "cells": [{"v": float(v), "dir": d.tolist()} for v, d in zip(self.weights, self.directions)],
        }


def eval_diffusion(spec: DiffusionSpec, t: float, x, cell: int) -> np.ndarray:
    if not 0 <= cell < spec.n_cells:
        raise IndexError(f"cell {cell} out of range")
    return np.array(spec.all_cells(t, x)[..., cell, :])


def _sample_box(rng: np.random.Generator, n: int, d: int, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=(n, d))


def _pairs(cfg: SamplerConfig, d: int):
    """Sampled (x, y) pairs: wide pairs from the box plus close pairs."""
    rng = np.random.default_rng(cfg.seed)
    n = max(int(cfg.n_samples), 2)
    x = _sample_box(rng, n, d, cfg.bound)
    y = _sample_box(rng, n, d, cfg.bound)
    near = x + rng.normal(scale=1e-3 * cfg.bound, size=x.shape)
    xs = np.concatenate([x, x])
    ys = np.concatenate([y, near])
    keep = np.linalg.norm(xs - ys, axis=1) > 1e-12
    return xs[keep], ys[keep]


def check_semimonotone(spec: DriftSpec, gen: SpectralGenerator, cfg: SamplerConfig = SamplerConfig()) -> CheckResult:
    """max <f(x)-f(y), x-y> / ||x-y||^2 over sampled pairs against the declared M."""
    x, y = _pairs(cfg, gen.dim)
    if gen.dim == 1:
        # dense 1-D sweep of pairs on a lattice
        grid = np.linspace(-cfg.bound, cfg.bound, 201)
        gx, gy = np.meshgrid(grid, grid)
        mask = gx != gy
        x = np.concatenate([x, gx[mask][:, None]])
        y = np.concatenate([y, gy[mask][:, None]])
    dx = x - y
    q = np.sum((eval_drift(spec, gen, x) - eval_drift(spec, gen, y)) * dx, axis=1) / np.sum(dx * dx, axis=1)
    qmax = float(q.max())
    return CheckResult("semimonotone", qmax, float(spec.M), qmax <= spec.M + 1e-9,
                       "<f(x)-f(y),x-y> <= M||x-y||^2")


def check_linear_growth(spec: DriftSpec, gen: SpectralGenerator, cfg: SamplerConfig = SamplerConfig()) -> CheckResult:
    rng = np.random.default_rng(cfg.seed + 1)
    x = _sample_box(rng, max(int(cfg.n_samples), 1), gen.dim, cfg.bound)
    x = np.concatenate([np.zeros((1, gen.dim)), x, 10 * x[:10]])
    ratio = np.linalg.norm(eval_drift(spec, gen, x), axis=1) / (1.0 + np.linalg.norm(x, axis=1))
    rmax = float(ratio.max())
    return CheckResult("linear_growth", rmax, float(spec.C), rmax <= spec.C + 1e-9,
                       "||f(x)|| <= C(1+||x||)")


def estimate_G_norms(spec: DiffusionSpec, cell: int, cfg: SamplerConfig = SamplerConfig(), t: float = 0.0):
    """Empirical sup ||G(x)||/(1+||x||) and sup ||G(x)-G(y)||/||x-y|| for one cell."""
    rng = np.random.default_rng(cfg.seed + 2)
    n = max(int(cfg.n_samples), 1)
    d = spec.dim
    radii = np.concatenate([np.zeros(1), np.geomspace(1e-6, cfg.bound, n)])
    u = rng.normal(size=(radii.size, d))
    u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
    x = radii[:, None] * u
    x = np.concatenate([x, _sample_box(rng, n, d, cfg.bound)])
    gx = eval_diffusion(spec, t, x, cell)
    norm0 = float(np.max(np.linalg.norm(gx, axis=1) / (1.0 + np.linalg.norm(x, axis=1))))
    xp, yp = _pairs(cfg, d)
    diff = eval_diffusion(spec, t, xp, cell) - eval_diffusion(spec, t, yp, cell)
    norm1 = float(np.max(np.linalg.norm(diff, axis=1) / np.linalg.norm(xp - yp, axis=1)))
    return norm0, norm1


def check_lipschitz_aggregate(spec: DiffusionSpec, marks: MarkMeasure,
                              cfg: SamplerConfig = SamplerConfig(), t: float = 0.0) -> CheckResult:
    x, y = _pairs(cfg, spec.dim)
    diff = spec.all_cells(t, x) - spec.all_cells(t, y)  # (n, cells, d)
    agg = np.sum(marks.masses[None, :] * np.sum(diff**2, axis=2), axis=1)
    q = float(np.max(agg / np.sum((x - y) ** 2, axis=1)))
    M = spec.lipschitz_constant(marks)
    return CheckResult("lipschitz_aggregate", q, M, q <= M + 1e-9,
                       "sum_j mass_j ||G(x,v_j)-G(y,v_j)||^2 <= M||x-y||^2")


@dataclass
class Hypothesis3Report:
    deltas: tuple[float, ...]
    integral_norm0: list[float] = field(default_factory=list)
    integral_norm1: list[float] = field(default_factory=list)

    @property
    def finite(self) -> bool:
        return all(np.isfinite(v) for v in self.integral_norm0 + self.integral_norm1)

    def to_json(self) -> dict:
        return {"deltas": list(self.deltas), "norm0": [_jsonable(v) for v in self.integral_norm0],
                "norm1": [_jsonable(v) for v in self.integral_norm1], "finite": self.finite}


def check_hypothesis3(spec: DiffusionSpec, marks: MarkMeasure, T: float,
                      deltas: Sequence[float] = (0.5, 1.0, 2.0)) -> Hypothesis3Report:
    """int_{[0,T] x marks} exp(delta ||G||^2) d nu_T by direct summation over cells."""
    n0 = spec.norm0_bounds()
    n1 = spec.norm1_bounds()
    rep = Hypothesis3Report(tuple(float(d) for d in deltas))
    with np.errstate(over="ignore"):
        for delta in rep.deltas:
            rep.integral_norm0.append(float(T * np.sum(marks.masses * np.exp(delta * n0**2))))
            rep.integral_norm1.append(float(T * np.sum(marks.masses * np.exp(delta * n1**2))))
    return rep
