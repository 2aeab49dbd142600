"""Experiment configuration: strict JSON schema and conversion to library objects.

Unknown keys are rejected everywhere.  Errors carry the dotted key path, and
JSON syntax errors carry line and column.
"""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .coefficients import DiffusionSpec, DriftSpec, SamplerConfig
from .ldp import EventSpec, LaplaceFunctional, OptConfig
from .measure import ControlFunction, MarkMeasure, TimeGrid
from .semigroup import SpectralGenerator
from .solver import SolverConfig, System

ACTIONS = ("simulate", "skeleton", "rate", "ldp_scan", "laplace", "validate")


class ConfigError(ValueError):
    """Config could not be read, parsed or cross-validated."""


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeneratorCfg(Strict):
    type: Literal["scalar", "heat1d"]
    dim: int = Field(ge=1)
    rates: Optional[list[float]] = None
    n_points: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _rates(self):
        if self.type == "scalar":
            if self.rates is None or len(self.rates) != self.dim:
                raise ValueError("scalar generator needs 'rates' with one entry per dimension")
            if any(r > 0 for r in self.rates):
                raise ValueError("eigenvalues must be <= 0")
        elif self.rates is not None:
            raise ValueError("heat1d eigenvalues are implied; drop 'rates'")
        return self


DRIFT_PARAMS = {"zero": (), "linear": ("c",), "tanh-monotone": ("a", "b")}


class DriftCfg(Strict):
    kind: Literal["zero", "linear", "tanh-monotone"] = "zero"
    params: dict[str, float] = Field(default_factory=dict)
    M: Optional[float] = None
    C: Optional[float] = None

    @model_validator(mode="after")
    def _params(self):
        allowed = DRIFT_PARAMS[self.kind]
        extra = sorted(set(self.params) - set(allowed))
        if extra:
            raise ValueError(f"{self.kind} drift takes params {list(allowed)}, got unexpected {extra}")
        return self


class CellCfg(Strict):
    v: float
    dir: list[float]


class DiffusionCfg(Strict):
    sigma: float
    modulation: Literal["additive", "affine-bounded"] = "additive"
    kappa: float = Field(default=0.0, ge=0.0)
    M: Optional[float] = None
    cells: list[CellCfg] = Field(min_length=1)


class MarkCfg(Strict):
    label: str
    mass: float = Field(ge=0.0)


class SystemCfg(Strict):
    generator: GeneratorCfg
    drift: DriftCfg = DriftCfg()
    diffusion: DiffusionCfg
    marks: list[MarkCfg] = Field(min_length=1)
    x0: Optional[list[float]] = None


class GridCfg(Strict):
    T: float = Field(gt=0.0)
    n_steps: int = Field(ge=1)


class SolverCfg(Strict):
    picard_tol: float = Field(default=1e-10, gt=0.0)
    picard_max_iters: int = Field(default=200, ge=1)
    monitor_tol: Optional[float] = Field(default=None, gt=0.0)


class ControlCfg(Strict):
    """Either a constant level or a full value matrix on its own grid."""

    constant: Optional[float] = Field(default=None, ge=0.0)
    n_steps: Optional[int] = Field(default=None, ge=1)
    values: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.constant is None) == (self.values is None):
            raise ValueError("give exactly one of 'constant' or 'values'")
        return self


class EventCfg(Strict):
    kind: Literal["terminal-halfspace", "terminal-ball-complement", "supnorm-exceedance"]
    direction: Optional[list[float]] = None
    threshold: Optional[float] = None
    center: Optional[list[float]] = None
    radius: Optional[float] = None

    @model_validator(mode="after")
    def _fields(self):
        need = {"terminal-halfspace": ("direction", "threshold"),
                "terminal-ball-complement": ("center", "radius"),
                "supnorm-exceedance": ("radius",)}[self.kind]
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"{self.kind} event needs {', '.join(missing)}")
        return self


class OptimizerCfg(Strict):
    rho_schedule: list[float] = Field(default_factory=lambda: [10.0**k for k in range(6)])
    starts: list[float] = Field(default_factory=lambda: [1.0, 0.5, 2.0, 4.0, 8.0])
    max_sweeps: int = Field(default=40, ge=1)
    multiplier_rounds: int = Field(default=4, ge=0)
    fd_step: float = Field(default=1e-6, gt=0.0)
    feasibility_tol: float = Field(default=1e-3, gt=0.0)
    control_steps: Optional[int] = Field(default=None, ge=1)


class SimulateCfg(Strict):
    epsilon: float = Field(gt=0.0)
    n_paths: int = Field(default=1, ge=1)


class SkeletonCfg(Strict):
    initial_guess: Literal["stepping", "constant"] = "stepping"


class RateCfg(Strict):
    optimizer: OptimizerCfg = OptimizerCfg()


class LdpScanCfg(Strict):
    epsilons: list[float] = Field(min_length=1)
    n_samples: int = Field(ge=1)
    speed: float = Field(default=1.0, gt=0.0)
    optimizer: OptimizerCfg = OptimizerCfg()

    @field_validator("epsilons")
    @classmethod
    def _decreasing(cls, v):
        if any(e <= 0 for e in v) or any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("epsilons must be positive and strictly decreasing")
        return v


class FunctionalCfg(Strict):
    kind: Literal["terminal", "supnorm"] = "terminal"
    scale: float = 1.0
    offset: float = 0.0
    lo: float = 0.0
    hi: float = 1.0
    direction: Optional[list[float]] = None


class LaplaceCfg(Strict):
    functional: FunctionalCfg = FunctionalCfg()
    epsilons: list[float] = Field(min_length=1)
    levels: list[float] = Field(default_factory=list)
    n_samples: int = Field(ge=1)
    speed: float = Field(default=1.0, gt=0.0)
    optimizer: OptimizerCfg = OptimizerCfg()


class SamplerCfg(Strict):
    n_samples: int = Field(default=2000, ge=2)
    bound: float = Field(default=5.0, gt=0.0)


class WeakCfg(Strict):
    epsilons: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05])
    n_seeds: int = Field(default=200, ge=1)
    threshold: Optional[float] = None
    slope_range: Optional[tuple[float, float]] = None


class VariationalCfg(Strict):
    scale: float = 1.0
    cap: float = 3.0
    offset: float = 0.0
    theta: float = Field(default=1.0, gt=0.0)
    n_samples: int = Field(default=20000, ge=2)
    gap_bound: float = 0.05
    K: int = Field(default=30, ge=1)


class ValidateCfg(Strict):
    suites: list[Literal["system", "weak-convergence", "variational"]] = Field(
        default_factory=lambda: ["system"], min_length=1)
    sampler: SamplerCfg = SamplerCfg()
    weak: WeakCfg = WeakCfg()
    variational: VariationalCfg = VariationalCfg()


class ExperimentConfig(Strict):
    name: str = "experiment"
    description: str = ""
    seed: int = Field(default=0, ge=0, lt=2**64)
    system: SystemCfg
    grid: GridCfg
    solver: SolverCfg = SolverCfg()
    control: Optional[ControlCfg] = None
    event: Optional[EventCfg] = None
    simulate: Optional[SimulateCfg] = None
    skeleton: Optional[SkeletonCfg] = None
    rate: Optional[RateCfg] = None
    ldp_scan: Optional[LdpScanCfg] = None
    laplace: Optional[LaplaceCfg] = None
    validate_: Optional[ValidateCfg] = Field(default=None, alias="validate")

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _consistent(self):
        s = self.system
        d = s.generator.dim
        if s.x0 is not None and len(s.x0) != d:
            raise ValueError(f"system.x0 has {len(s.x0)} entries, generator dim is {d}")
        for k, cell in enumerate(s.diffusion.cells):
            if len(cell.dir) != d:
                raise ValueError(f"system.diffusion.cells.{k}.dir has {len(cell.dir)} entries, expected {d}")
        if len(s.diffusion.cells) != len(s.marks):
            raise ValueError("system.diffusion.cells and system.marks differ in length")
        if self.control is not None and self.control.values is not None:
            rows = self.control.values
            n = self.control.n_steps or len(rows)
            if len(rows) != n or any(len(r) != len(s.marks) for r in rows):
                raise ValueError(f"control.values must be {n} x {len(s.marks)}")
            if any(v < 0 for r in rows for v in r):
                raise ValueError("control.values must be nonnegative")
            if self.grid.n_steps % n:
                raise ValueError("grid.n_steps must be a multiple of the control grid size")
        if self.event is not None:
            vec = self.event.direction if self.event.kind == "terminal-halfspace" else self.event.center
            if vec is not None and len(vec) != d:
                raise ValueError(f"event vector has {len(vec)} entries, expected {d}")
        return self

    def actions(self) -> list[str]:
        return [a for a in ACTIONS if self.section(a) is not None]

    def section(self, action: str):
        return getattr(self, "validate_" if action == "validate" else action)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    # --- builders ----------------------------------------------------------

    def build_system(self) -> System:
        s = self.system
        g = s.generator
        if g.type == "scalar":
            gen = SpectralGenerator.scalar(g.rates)
        else:
            gen = SpectralGenerator.heat1d(g.dim, g.n_points)
        p = s.drift.params
        drift = DriftSpec(s.drift.kind, p.get("c", 0.0), p.get("a", 0.0), p.get("b", 0.0), s.drift.M, s.drift.C)
        diff = DiffusionSpec(s.diffusion.sigma, [c.v for c in s.diffusion.cells],
                             [c.dir for c in s.diffusion.cells], s.diffusion.modulation, s.diffusion.kappa,
                             s.diffusion.M)
        marks = MarkMeasure([(m.label, m.mass) for m in s.marks])
        x0 = np.zeros(g.dim) if s.x0 is None else s.x0
        return System(gen, drift, diff, marks, x0)

    def build_grid(self) -> TimeGrid:
        return TimeGrid(self.grid.T, self.grid.n_steps)

    def build_solver(self) -> SolverConfig:
        return SolverConfig(self.build_grid(), self.solver.picard_tol, self.solver.picard_max_iters,
                            self.solver.monitor_tol)

    def build_control(self, marks: MarkMeasure) -> ControlFunction:
        c = self.control
        if c is None:
            return ControlFunction.constant(self.build_grid(), marks, 1.0)
        if c.constant is not None:
            return ControlFunction.constant(self.build_grid(), marks, c.constant)
        return ControlFunction(TimeGrid(self.grid.T, len(c.values)), marks, c.values)

    def build_event(self) -> EventSpec:
        if self.event is None:
            raise ConfigError("this action needs an 'event' section")
        e = self.event
        return EventSpec(e.kind, direction=e.direction, threshold=e.threshold or 0.0, center=e.center,
                         radius=e.radius or 0.0)

    def build_sampler(self, seed: int) -> SamplerConfig:
        v = self.validate_ or ValidateCfg()
        return SamplerConfig(v.sampler.n_samples, v.sampler.bound, seed)


def build_opt(cfg: OptimizerCfg) -> OptConfig:
    return OptConfig(rho_schedule=tuple(cfg.rho_schedule), starts=tuple(cfg.starts), max_sweeps=cfg.max_sweeps,
                     multiplier_rounds=cfg.multiplier_rounds, fd_step=cfg.fd_step,
                     feasibility_tol=cfg.feasibility_tol)


def build_functional(cfg: FunctionalCfg) -> LaplaceFunctional:
    return LaplaceFunctional(cfg.kind, cfg.scale, cfg.offset, cfg.lo, cfg.hi,
                             None if cfg.direction is None else np.asarray(cfg.direction))


def format_validation_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        msg = e["msg"].removeprefix("Value error, ")
        path = ".".join(str(p) for p in e["loc"])
        lines.append(f"{path}: {msg}" if path else msg)
    return "\n".join(lines)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: invalid config\n{format_validation_error(exc)}") from None


def bundled_names() -> list[str]:
    root = resources.files("jumpldp") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_text(name: str) -> str:
    return (resources.files("jumpldp") / "configs" / f"{name}.json").read_text(encoding="utf-8")


def load_config(ref: str) -> ExperimentConfig:
    """Load from a file path, or by bundled example name."""
    path = Path(ref)
    if path.is_file():
        return parse_config(path.read_text(encoding="utf-8"), str(path))
    if ref in bundled_names():
        return parse_config(bundled_text(ref), ref)
    raise ConfigError(f"{ref}: no such file or bundled example (try list-examples)")
