"""Diagonal generators, their semigroups and Yosida approximants.

States are plain 1-D float arrays of coefficients in the generator's basis.
For the ``dirichlet-sine`` basis the k-th coefficient multiplies
sqrt(2) sin(k pi x) on (0, 1), which is orthonormal in L^2, so the Euclidean
norm of the coefficients is the L^2 norm of the field.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BASES = ("identity", "dirichlet-sine")


@dataclass(frozen=True, eq=False)
class SpectralGenerator:
    """Self-adjoint generator with eigenvalues <= 0 in a fixed orthonormal basis.

    ``n_points`` is the size of the interior collocation grid used for
    pointwise (Nemytskii) maps on sine-basis fields; it is ignored for the
    identity basis.
    """

    eigenvalues: np.ndarray
    basis: str = "identity"
    n_points: int | None = None
    _collocation: tuple = field(default=None, repr=False)

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).ravel()
        if lam.size < 1:
            raise ValueError("generator needs at least one eigenvalue")
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        if np.any(lam > 0):
            raise ValueError("eigenvalues must be <= 0 (contraction semigroup)")
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}; expected one of {BASES}")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        if self.basis == "dirichlet-sine":
            n_points = self.n_points or 4 * lam.size
            if n_points < lam.size:
                raise ValueError("need at least as many collocation points as modes")
            object.__setattr__(self, "n_points", int(n_points))
            object.__setattr__(self, "_collocation", _sine_matrices(lam.size, int(n_points)))

    @classmethod
    def scalar(cls, rates: Sequence[float]) -> SpectralGenerator:
        return cls(np.asarray(rates, dtype=float), "identity")

    @classmethod
    def heat1d(cls, dim: int, n_points: int | None = None) -> SpectralGenerator:
        k = np.arange(1, int(dim) + 1)
        return cls(-(k * np.pi) ** 2, "dirichlet-sine", n_points)

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def points(self) -> np.ndarray:
        if self.basis != "dirichlet-sine":
            raise ValueError("identity basis has no collocation grid")
        return self._collocation[0]

    def decay(self, t) -> np.ndarray:
        """exp(lambda_k t); ``t`` may be an array, giving shape t.shape + (d,)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("semigroup time must be nonnegative")
        return np.exp(t[..., None] * self.eigenvalues)

    def to_field(self, x) -> np.ndarray:
        return coeffs_to_field(self, x)

    def from_field(self, u) -> np.ndarray:
        return field_to_coeffs(self, u)

    def to_json(self) -> dict:
        if self.basis == "dirichlet-sine":
            return {"type": "heat1d", "dim": self.dim, "n_points": self.n_points}
        return {"type": "scalar", "dim": self.dim, "rates": self.eigenvalues.tolist()}


def _sine_matrices(dim: int, n_points: int):
    h = 1.0 / (n_points + 1)
    x = np.arange(1, n_points + 1) * h
    k = np.arange(1, dim + 1)
    basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(x, k))  # (M, d)
    # trapezoid weights; boundary samples are zero under Dirichlet conditions
    analysis = basis.T * h
    return x, basis, analysis


def apply_semigroup(gen: SpectralGenerator, t: float, x) -> np.ndarray:
    if t < 0:
        raise ValueError("semigroup time must be nonnegative")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != gen.dim:
        raise ValueError(f"state dimension {x.shape[-1]} != generator dimension {gen.dim}")
    return np.exp(gen.eigenvalues * t) * x


def yosida_eigenvalues(eigenvalues, m) -> np.ndarray:
    lam = np.asarray(eigenvalues, dtype=float)
    return lam * m / (m - lam)


def yosida(gen: SpectralGenerator, m: int) -> SpectralGenerator:
    """Bounded approximant A_m = A (I - A/m)^{-1}, i.e. lambda -> lambda m / (m - lambda)."""
    if m < 1:
        raise ValueError("Yosida index must be >= 1")
    return SpectralGenerator(yosida_eigenvalues(gen.eigenvalues, float(m)), gen.basis, gen.n_points)


def yosida_convergence_report(gen: SpectralGenerator, x, t: float, ms: Sequence[int]):
    """List of (m, ||(exp(t A_m) - S(t)) x||, operator-norm gap) per m."""
    x = np.asarray(x, dtype=float)
    exact = np.exp(t * gen.eigenvalues)
    rows = []
    for m in ms:
        approx = np.exp(t * yosida_eigenvalues(gen.eigenvalues, float(m)))
        diff = approx - exact
        rows.append((int(m), float(np.linalg.norm(diff * x)), float(np.max(np.abs(diff)))))
    return rows


def field_to_coeffs(gen: SpectralGenerator, samples) -> np.ndarray:
    """Project interior grid samples onto the sine basis (trapezoid rule)."""
    if gen.basis == "identity":
        u = np.asarray(samples, dtype=float)
        if u.shape[-1] != gen.dim:
            raise ValueError("sample count does not match dimension")
        return u.copy()
    _, _, analysis = gen._collocation
    u = np.asarray(samples, dtype=float)
    if u.shape[-1] != analysis.shape[1]:
        raise ValueError(f"expected {analysis.shape[1]} samples, got {u.shape[-1]}")
    return u @ analysis.T


def coeffs_to_field(gen: SpectralGenerator, x, points=None) -> np.ndarray:
    """Field values at the collocation grid, or at arbitrary ``points`` in [0, 1]."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != gen.dim:
        raise ValueError("coefficient count does not match dimension")
    if gen.basis == "identity":
        return x.copy()
    if points is None:
        basis = gen._collocation[1]
    else:
        k = np.arange(1, gen.dim + 1)
        basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(np.asarray(points, dtype=float), k))
    return x @ basis.T
