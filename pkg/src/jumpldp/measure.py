"""Intensity measures, controls and the relative-entropy cost.

The mark space is a finite list of cells with point masses, the time axis a
uniform grid on [0, T].  A control is a nonnegative matrix indexed by
(time interval, mark cell) that multiplies the jump intensity.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class MarkMeasure:
    """Finite-activity intensity measure on a discretized mark space."""

    labels: tuple[str, ...]
    masses: np.ndarray = field(repr=False)

    def __init__(self, cells: Iterable[tuple[str, float]]):
        cells = list(cells)
        labels = tuple(str(lab) for lab, _ in cells)
        masses = np.array([float(m) for _, m in cells], dtype=float)
        if masses.size and not np.all(np.isfinite(masses)):
            raise ValueError("mark masses must be finite")
        if np.any(masses < 0):
            raise ValueError("mark masses must be nonnegative")
        masses.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def single(cls, mass: float, label: str = "v0") -> MarkMeasure:
        return cls([(label, mass)])

    @property
    def n_cells(self) -> int:
        return len(self.labels)

    @property
    def cells(self) -> list[tuple[str, float]]:
        return [(lab, float(m)) for lab, m in zip(self.labels, self.masses)]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def require_cells(self) -> None:
        if self.n_cells == 0:
            raise ValueError("mark measure has no cells")

    def to_json(self) -> list[dict]:
        return [{"label": lab, "mass": m} for lab, m in self.cells]

    @classmethod
    def from_json(cls, data: Sequence[dict]) -> MarkMeasure:
        return cls((c["label"], c["mass"]) for c in data)

    def __eq__(self, other):
        if not isinstance(other, MarkMeasure):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.masses, other.masses)

    def __hash__(self):
        return hash((self.labels, self.masses.tobytes()))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with ``n_steps`` intervals on [0, T]."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def refine(self, factor: int) -> TimeGrid:
        return TimeGrid(self.T, self.n_steps * int(factor))

    def interval_of(self, t):
        """Index of the interval [t_i, t_{i+1}) containing ``t`` (T maps to the last)."""
        idx = np.floor(np.asarray(t) / self.dt).astype(int)
        return np.clip(idx, 0, self.n_steps - 1)

    def to_json(self) -> dict:
        return {"T": self.T, "n_steps": self.n_steps}


class ControlFunction:
    """Piecewise-constant nonnegative control on the time x mark grid.

    ``values[i, j]`` is the intensity multiplier on time interval ``i`` and
    mark cell ``j``.  Instances are immutable.
    """

    __slots__ = ("grid", "marks", "values")

    def __init__(self, grid: TimeGrid, marks: MarkMeasure, values):
        vals = np.array(values, dtype=float)
        if vals.ndim == 0:
            vals = np.full((grid.n_steps, marks.n_cells), float(vals))
        if vals.shape != (grid.n_steps, marks.n_cells):
            raise ValueError(
                f"control shape {vals.shape} does not match grid x cells "
                f"({grid.n_steps}, {marks.n_cells})"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite")
        if np.any(vals < 0):
            raise ValueError("control values must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("ControlFunction is immutable")

    def __reduce__(self):
        return (ControlFunction, (self.grid, self.marks, np.array(self.values)))

    @classmethod
    def constant(cls, grid: TimeGrid, marks: MarkMeasure, theta: float = 1.0) -> ControlFunction:
        return cls(grid, marks, float(theta))

    def with_values(self, values) -> ControlFunction:
        return ControlFunction(self.grid, self.marks, values)

    def bin_intensity(self, scale: float = 1.0) -> np.ndarray:
        """Expected counts per (interval, cell): scale * g * mass * dt."""
        return scale * self.values * self.marks.masses[None, :] * self.grid.dt

    def restrict(self, time_slice=slice(None), cell_index=None) -> ControlFunction:
        """Copy with the control set to 1 outside the selected bins (zero cost there)."""
        keep = np.zeros_like(self.values, dtype=bool)
        cols = slice(None) if cell_index is None else cell_index
        keep[time_slice, cols] = True
        return self.with_values(np.where(keep, self.values, 1.0))

    def refined(self, factor: int) -> ControlFunction:
        """Same control on a grid with ``factor`` times more intervals."""
        return ControlFunction(self.grid.refine(factor), self.marks,
                               np.repeat(self.values, int(factor), axis=0))

    @property
    def control_id(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update(repr(self.grid.to_json()).encode())
        h.update(self.marks.masses.tobytes())
        return h.hexdigest()[:12]

    def to_json(self) -> dict:
        return {
            "grid": self.grid.to_json(),
            "cells": self.marks.to_json(),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> ControlFunction:
        grid = TimeGrid(data["grid"]["T"], data["grid"]["n_steps"])
        return cls(grid, MarkMeasure.from_json(data["cells"]), data["values"])

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def __repr__(self):
        return (f"ControlFunction(n_steps={self.grid.n_steps}, cells={self.marks.n_cells}, "
                f"min={self.values.min():.4g}, max={self.values.max():.4g})")


def entropy_l(r):
    """r log r - r + 1, extended by continuity to l(0) = 1.

    Accepts scalars or arrays; raises ValueError for negative input.
    """
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("entropy_l is defined for r >= 0 only")
    with np.errstate(divide="ignore", invalid="ignore"):
        rlogr = np.where(arr > 0, arr * np.log(np.where(arr > 0, arr, 1.0)), 0.0)
    out = rlogr - arr + 1.0
    if np.ndim(r) == 0:
        return float(out)
    return out


def cost_LT(g: ControlFunction) -> float:
    """Entropy cost sum_ij l(g_ij) * mass_j * dt."""
    weights = g.marks.masses[None, :] * g.grid.dt
    return float(np.sum(entropy_l(g.values) * weights))


def sublevel_check(g: ControlFunction, N: float) -> bool:
    return cost_LT(g) <= N
