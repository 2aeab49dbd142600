import numpy as np
import pytest

from jumpldp.coefficients import DiffusionSpec, DriftSpec
from jumpldp.measure import ControlFunction, MarkMeasure, TimeGrid
from jumpldp.semigroup import SpectralGenerator
from jumpldp.solver import SolverConfig, System


def scalar_system(sigma=1.0, mass=1.0, drift=None, x0=0.0, rate=-1.0):
    marks = MarkMeasure.single(mass)
    return System(SpectralGenerator.scalar([rate]), drift or DriftSpec("zero"),
                  DiffusionSpec.additive(sigma, [1.0], [[1.0]]), marks, [x0])


def heat_system(d=8, kappa=0.0):
    gen = SpectralGenerator.heat1d(d)
    dirs = np.zeros((1, d))
    dirs[0, 0] = 1.0
    mod = "affine-bounded" if kappa else "additive"
    return System(gen, DriftSpec("zero"), DiffusionSpec(1.0, [1.0], dirs, mod, kappa),
                  MarkMeasure.single(1.0), np.zeros(d))


@pytest.fixture
def scalar():
    return scalar_system()


@pytest.fixture
def grid64():
    return TimeGrid(1.0, 64)


@pytest.fixture
def cfg64(grid64):
    return SolverConfig(grid64)


def const(grid, marks, theta):
    return ControlFunction.constant(grid, marks, theta)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
