"""Skeleton (controlled deterministic) and small-noise mild solvers.

Both use the exponential Euler step with left-point evaluation,

    x <- S(h) (x + h a(x)),

which is exact for the linear part and keeps the contraction of S.  The
skeleton forcing is a(x) = f(x) + sum_j G(x, v_j) (g - 1) mass_j; the mild
solver uses the compensator a(x) = f(x) - sum_j G(x, v_j) mass_j between
jumps and adds epsilon G(x-, v_j) at each jump.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .coefficients import DiffusionSpec, DriftSpec, eval_drift
from .measure import ControlFunction, MarkMeasure, TimeGrid
from .prm import PointPattern, SeededRng, sample_small_noise_prm
from .semigroup import SpectralGenerator


class SkeletonNonConvergence(RuntimeError):
    """Picard iteration hit its iteration cap; carries the last iterate."""

    def __init__(self, message: str, last_iterate: np.ndarray, distance: float):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.distance = distance


@dataclass(frozen=True, eq=False)
class System:
    """Generator, coefficients, mark measure and initial state of one model."""

    generator: SpectralGenerator
    drift: DriftSpec
    diffusion: DiffusionSpec
    marks: MarkMeasure
    x0: np.ndarray

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).ravel()
        d = self.generator.dim
        if x0.size != d:
            raise ValueError(f"x0 has dimension {x0.size}, generator has {d}")
        if self.diffusion.dim != d:
            raise ValueError(f"diffusion directions have dimension {self.diffusion.dim}, expected {d}")
        if self.diffusion.n_cells != self.marks.n_cells:
            raise ValueError("diffusion cells and mark cells differ in number")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self) -> int:
        return self.generator.dim

    def drift_at(self, x) -> np.ndarray:
        return eval_drift(self.drift, self.generator, x)

    def jumps_at(self, x, t: float = 0.0) -> np.ndarray:
        return self.diffusion.all_cells(t, x)

    def replace(self, **changes) -> System:
        fields = dict(generator=self.generator, drift=self.drift, diffusion=self.diffusion,
                      marks=self.marks, x0=self.x0)
        fields.update(changes)
        return System(**fields)


@dataclass(frozen=True)
class SolverConfig:
    grid: TimeGrid
    picard_tol: float = 1e-10
    picard_max_iters: int = 200
    monitor_tol: float | None = None

    def __post_init__(self):
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max_iters < 1:
            raise ValueError("picard_max_iters must be >= 1")
        if self.monitor_tol is not None and not self.monitor_tol > 0:
            raise ValueError("monitor_tol must be positive")


@dataclass(eq=False)
class PathRecord:
    """Cadlag path on a mesh of grid and jump times.

    ``states[k]`` is the (right-continuous) value at ``times[k]``;
    ``pre_states[k]`` the left limit, equal to ``states[k]`` off jumps.
    """

    times: np.ndarray
    states: np.ndarray
    pre_states: np.ndarray
    is_jump: np.ndarray
    jump_cells: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def continuous(cls, times, states, **metadata) -> PathRecord:
        states = np.asarray(states, dtype=float)
        n = states.shape[0]
        return cls(np.asarray(times, dtype=float), states, states.copy(),
                   np.zeros(n, dtype=bool), np.full(n, -1, dtype=int), dict(metadata))

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    @property
    def sup_norm(self) -> float:
        return float(max(np.linalg.norm(self.states, axis=1).max(),
                         np.linalg.norm(self.pre_states, axis=1).max()))

    @property
    def jump_times(self) -> np.ndarray:
        return self.times[self.is_jump]

    def value_at(self, t) -> np.ndarray:
        """Right-continuous evaluation with linear interpolation between mesh points."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, self.states.shape[1]))
        for k in range(self.states.shape[1]):
            out[:, k] = np.interp(t, self.times, self.states[:, k])
        return out

    def sup_distance(self, other: PathRecord) -> float:
        """sup_t ||self - other|| on this path's mesh, other interpolated."""
        ref = other.value_at(self.times)
        d_post = np.linalg.norm(self.states - ref, axis=1)
        d_pre = np.linalg.norm(self.pre_states - ref, axis=1)
        return float(max(d_post.max(), d_pre.max()))

    def to_csv(self, path=None) -> str:
        d = self.states.shape[1]
        buf = io.StringIO()
        buf.write(",".join(["t"] + [f"x{k}" for k in range(d)] + ["is_jump"]) + "\n")
        for t, x, j in zip(self.times, self.states, self.is_jump):
            buf.write(",".join([format(float(t), ".17g")] + [format(float(v), ".17g") for v in x]
                               + [str(int(j))]) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_json(self) -> dict:
        return {
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "pre_states": self.pre_states.tolist(),
            "is_jump": self.is_jump.astype(int).tolist(),
            "jump_cells": self.jump_cells.tolist(),
            "metadata": self.metadata,
        }

    def dump_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")


def control_on_grid(g: ControlFunction, grid: TimeGrid) -> np.ndarray:
    """Control values at each solver interval; the solver grid must refine g's grid."""
    if not np.isclose(g.grid.T, grid.T, rtol=1e-12, atol=0):
        raise ValueError(f"control horizon {g.grid.T} != solver horizon {grid.T}")
    factor, rem = divmod(grid.n_steps, g.grid.n_steps)
    if rem:
        raise ValueError("solver grid must be a refinement of the control grid")
    return np.repeat(g.values, factor, axis=0)


def skeleton_forcing(system: System, g: ControlFunction, grid: TimeGrid):
    """a_i(x) = f(x) + sum_j G(x, v_j)(g_ij - 1) mass_j on solver interval i."""
    tilt = (control_on_grid(g, grid) - 1.0) * system.marks.masses[None, :]  # (n, cells)

    def forcing(i, x):
        x = np.asarray(x, dtype=float)
        jumps = system.jumps_at(x)  # (..., cells, d)
        w = tilt[i]
        return system.drift_at(x) + np.einsum("...j,...jd->...d", w, jumps)

    return forcing


def march_skeleton(system: System, g: ControlFunction, grid: TimeGrid, x0=None) -> np.ndarray:
    """Plain forward stepping of the discrete mild map; shape (n_steps+1, d)."""
    x = np.array(system.x0 if x0 is None else x0, dtype=float)
    n = grid.n_steps
    decay = np.exp(system.generator.eigenvalues * grid.dt)
    dt = grid.dt
    out = np.empty((n + 1, x.size))
    out[0] = x
    tilt = (control_on_grid(g, grid) - 1.0) * system.marks.masses[None, :]
    if system.diffusion.is_additive and system.drift.is_linear:
        push = tilt @ system.diffusion.amplitudes  # (n, d), state independent
        c = system.drift.c if system.drift.kind == "linear" else 0.0
        lin = decay * (1.0 + dt * c)
        for i in range(n):
            x = lin * x + dt * decay * push[i]
            out[i + 1] = x
        return out
    for i in range(n):
        a = system.drift_at(x) + tilt[i] @ system.jumps_at(x)
        x = decay * (x + dt * a)
        out[i + 1] = x
    return out


def march_skeleton_batch(system: System, values: np.ndarray, control_grid: TimeGrid,
                         grid: TimeGrid) -> np.ndarray:
    """Forward stepping for a batch of control arrays (B, n_ctrl, cells); shape (B, n+1, d)."""
    values = np.asarray(values, dtype=float)
    probe = ControlFunction.constant(control_grid, system.marks, 1.0)
    factor = grid.n_steps // control_grid.n_steps
    control_on_grid(probe, grid)  # validates refinement
    tilt = (np.repeat(values, factor, axis=1) - 1.0) * system.marks.masses  # (B, n, cells)
    B = values.shape[0]
    decay = np.exp(system.generator.eigenvalues * grid.dt)
    dt = grid.dt
    x = np.tile(system.x0, (B, 1))
    out = np.empty((B, grid.n_steps + 1, system.dim))
    out[:, 0] = x
    if system.diffusion.is_additive and system.drift.is_linear:
        push = tilt @ system.diffusion.amplitudes  # (B, n, d)
        c = system.drift.c if system.drift.kind == "linear" else 0.0
        lin = decay * (1.0 + dt * c)
        for i in range(grid.n_steps):
            x = lin * x + dt * decay * push[:, i]
            out[:, i + 1] = x
        return out
    for i in range(grid.n_steps):
        a = system.drift_at(x) + np.einsum("bj,bjd->bd", tilt[:, i], system.jumps_at(x))
        x = decay * (x + dt * a)
        out[:, i + 1] = x
    return out


def _mild_map(system: System, grid: TimeGrid, forcing, Y: np.ndarray) -> np.ndarray:
    """Phi(Y)_n = S(t_n) x0 + sum_{i<n} dt S(t_n - t_i) a_i(Y_i), evaluated exactly."""
    n = grid.n_steps
    A = forcing(np.arange(n), Y[:-1])  # (n, d)
    r = np.exp(system.generator.eigenvalues * grid.dt)
    out = np.empty_like(Y)
    t = grid.times
    for k in range(Y.shape[1]):
        # Z_m = r Z_{m-1} + r dt A_{m-1}
        conv = lfilter([0.0, r[k] * grid.dt], [1.0, -r[k]], np.concatenate([A[:, k], [0.0]]))
        out[:, k] = np.exp(system.generator.eigenvalues[k] * t) * system.x0[k] + conv
    return out


def solve_skeleton(system: System, g: ControlFunction, cfg: SolverConfig,
                   initial_guess="stepping", x0=None) -> PathRecord:
    """Fixed point of the discrete mild map by Picard iteration over the whole path.

    ``initial_guess`` is "stepping" (forward stepping, already the fixed point
    up to rounding), "constant" (x0 held constant) or an explicit array.
    Successive sup distances are kept in ``metadata["picard_distances"]``.
    """
    grid = cfg.grid
    if x0 is not None:
        system = system.replace(x0=x0)
    forcing = skeleton_forcing(system, g, grid)
    if isinstance(initial_guess, str):
        if initial_guess == "stepping":
            Y = march_skeleton(system, g, grid)
        elif initial_guess == "constant":
            Y = np.tile(system.x0, (grid.n_steps + 1, 1))
        else:
            raise ValueError(f"unknown initial guess {initial_guess!r}")
    else:
        Y = np.array(initial_guess, dtype=float).reshape(grid.n_steps + 1, system.dim)
    distances = []
    for _ in range(cfg.picard_max_iters):
        Y_new = _mild_map(system, grid, forcing, Y)
        dist = float(np.max(np.linalg.norm(Y_new - Y, axis=1)))
        distances.append(dist)
        Y = Y_new
        if not np.all(np.isfinite(Y)):
            raise SkeletonNonConvergence("Picard iterate is not finite", Y, dist)
        if dist < cfg.picard_tol * (1.0 + float(np.max(np.linalg.norm(Y, axis=1)))):
            break
    else:
        raise SkeletonNonConvergence(
            f"Picard iteration did not converge in {cfg.picard_max_iters} iterations "
            f"(last distance {distances[-1]:.3e})", Y, distances[-1])
    return PathRecord.continuous(grid.times, Y, control_id=g.control_id, epsilon=0.0,
                                 picard_distances=distances)


def _mild_step(system: System, x, h):
    """One compensated exponential Euler step of length h (scalar or per row)."""
    comp = system.diffusion.all_cells(0.0, x)
    a = system.drift_at(x) - np.einsum("j,...jd->...d", system.marks.masses, comp)
    h = np.asarray(h, dtype=float)[..., None]
    return np.exp(h * system.generator.eigenvalues) * (x + h * a)


def solve_mild(system: System, epsilon: float, g: ControlFunction, cfg: SolverConfig,
               rng: SeededRng | None = None, pattern: PointPattern | None = None) -> PathRecord:
    """Jump-adapted exponential Euler for the small-noise equation driven by N^{g/eps}.

    Pass ``pattern`` to drive the path with a given point configuration
    instead of sampling one from ``rng``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    grid = cfg.grid
    if pattern is None:
        if rng is None:
            raise ValueError("need rng or pattern")
        pattern = sample_small_noise_prm(epsilon, g, rng)
    grid_t = grid.times
    ev_t = pattern.times
    # merged mesh: grid nodes then events; an event on a node is processed after it
    mesh_t = np.concatenate([grid_t, ev_t])
    kinds = np.concatenate([np.full(grid_t.size, -1), pattern.cells])
    order = np.lexsort((kinds >= 0, mesh_t))
    mesh_t, kinds = mesh_t[order], kinds[order]
    x = system.x0.astype(float).copy()
    states, pres, flags, cells, times = [x.copy()], [x.copy()], [False], [-1], [0.0]
    cur = 0.0
    for t, c in zip(mesh_t[1:], kinds[1:]):
        h = t - cur
        if h > 0:
            x = _mild_step(system, x, h)
            cur = t
        if c >= 0:
            pre = x.copy()
            x = x + epsilon * system.diffusion.all_cells(t, x)[c]
            times.append(t); pres.append(pre); states.append(x.copy()); flags.append(True); cells.append(int(c))
        elif h > 0:
            times.append(t); pres.append(x.copy()); states.append(x.copy()); flags.append(False); cells.append(-1)
    return PathRecord(np.array(times), np.array(states), np.array(pres), np.array(flags),
                      np.array(cells, dtype=int),
                      {"epsilon": float(epsilon), "seed": None if rng is None else rng.seed,
                       "control_id": g.control_id, "n_jumps": int(len(pattern))})


def solve_mild_batch(system: System, epsilon: float, grid: TimeGrid, ev_times: np.ndarray,
                     ev_cells: np.ndarray, reference: np.ndarray | None = None) -> dict:
    """Vectorized jump-adapted solver for a batch of padded event arrays.

    ``ev_times``/``ev_cells`` come from :func:`prm.events_from_counts`.
    Returns terminal states, sup norms and (when ``reference`` grid states
    are given) sup distances to the linearly interpolated reference.
    """
    n = ev_times.shape[0]
    d = system.dim
    x = np.tile(system.x0, (n, 1))
    cur = np.zeros(n)
    ptr = np.zeros(n, dtype=np.int64)
    sup = np.full(n, float(np.linalg.norm(system.x0)))
    sup_diff = np.zeros(n) if reference is not None else None
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        sup_diff[:] = np.linalg.norm(system.x0 - reference[0])
    rows = np.arange(n)
    pad_t = np.concatenate([ev_times, np.full((n, 1), np.inf)], axis=1)
    pad_c = np.concatenate([ev_cells, np.full((n, 1), -1)], axis=1)
    grid_t = grid.times
    dt = grid.dt
    for i in range(grid.n_steps):
        t_next = grid_t[i + 1]
        while True:
            nxt = pad_t[rows, ptr]
            active = nxt <= t_next if i == grid.n_steps - 1 else nxt < t_next
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            xs = x[idx]
            h = nxt[idx] - cur[idx]
            xs = _mild_step(system, xs, h)
            cell = pad_c[idx, ptr[idx]]
            jumps = system.diffusion.all_cells(0.0, xs)  # (m, cells, d)
            post = xs + epsilon * jumps[np.arange(idx.size), cell]
            n_pre = np.linalg.norm(xs, axis=1)
            n_post = np.linalg.norm(post, axis=1)
            sup[idx] = np.maximum(sup[idx], np.maximum(n_pre, n_post))
            if reference is not None:
                frac = (nxt[idx] - grid_t[i]) / dt
                ref = reference[i] + frac[:, None] * (reference[i + 1] - reference[i])
                dd = np.maximum(np.linalg.norm(xs - ref, axis=1), np.linalg.norm(post - ref, axis=1))
                sup_diff[idx] = np.maximum(sup_diff[idx], dd)
            x[idx] = post
            cur[idx] = nxt[idx]
            ptr[idx] += 1
        h = t_next - cur
        moving = h > 0
        if moving.all():
            x = _mild_step(system, x, h)
        elif moving.any():
            x[moving] = _mild_step(system, x[moving], h[moving])
        cur[:] = t_next
        sup = np.maximum(sup, np.linalg.norm(x, axis=1))
        if reference is not None:
            sup_diff = np.maximum(sup_diff, np.linalg.norm(x - reference[i + 1], axis=1))
    out = {"terminal": x, "sup_norm": sup}
    if reference is not None:
        out["sup_diff"] = sup_diff
    return out


def default_monitor_tol(path: PathRecord, dt: float) -> float:
    return 10.0 * dt * (1.0 + path.sup_norm**2)


def energy_monitor(path: PathRecord, forcing) -> float:
    """max_t ||X_t||^2 - ||X_0||^2 - 2 sum <X_s, a(s)> ds over mesh times t > 0.

    ``forcing(i, x)`` is the integrand on mesh interval i.  Negative values
    mean the inequality holds with margin.
    """
    X = path.states
    if X.shape[0] < 2:
        return 0.0
    h = np.diff(path.times)
    A = np.asarray(forcing(np.arange(X.shape[0] - 1), X[:-1]))
    integral = np.cumsum(2.0 * h * np.sum(X[:-1] * A, axis=1))
    energy = np.sum(X[1:] ** 2, axis=1) - np.sum(X[0] ** 2)
    return float(np.max(energy - integral))


def ito_monitor(path: PathRecord, system: System) -> float:
    """max_t ||X_t||^2 - ||X_0||^2 - 2 int <X_{s-}, dZ_s> - [Z]_t along a mild path.

    dZ is the compensated drift between mesh points plus the jumps recorded
    in the path; the quadratic variation is the sum of squared jumps.
    Evaluated at every mesh time, both before and after jumps.
    """
    X, P = path.states, path.pre_states
    x0sq = float(np.sum(X[0] ** 2))
    acc = 0.0
    worst = 0.0
    for k in range(1, X.shape[0]):
        h = path.times[k] - path.times[k - 1]
        if h > 0:
            xk = X[k - 1]
            comp = system.diffusion.all_cells(path.times[k - 1], xk)
            a = system.drift_at(xk) - system.marks.masses @ comp
            acc += 2.0 * h * float(xk @ a)
        worst = max(worst, float(P[k] @ P[k]) - x0sq - acc)
        if path.is_jump[k]:
            delta = X[k] - P[k]
            acc += 2.0 * float(P[k] @ delta) + float(delta @ delta)
        worst = max(worst, float(X[k] @ X[k]) - x0sq - acc)
    return worst


def skeleton_apriori_bound(system: System, g: ControlFunction, grid: TimeGrid) -> float:
    """Gronwall bound on sup_t ||X^g_t|| for the discrete skeleton.

    Uses ||f(x)|| <= C(1+||x||) and ||G(x,v_j)|| <= ||G_j||_0 (1+||x||), so
    1 + ||X_n|| <= (1 + ||x0||) exp(sum_i dt b_i) with
    b_i = C + sum_j ||G_j||_0 |g_ij - 1| mass_j.
    """
    gv = control_on_grid(g, grid)
    n0 = system.diffusion.norm0_bounds()
    b = system.drift.C + np.abs(gv - 1.0) @ (n0 * system.marks.masses)
    B = float(np.sum(b) * grid.dt)
    return (1.0 + float(np.linalg.norm(system.x0))) * np.exp(B) - 1.0


def mild_apriori_bound(system: System, g: ControlFunction, epsilon_max: float) -> float:
    """Bound on E (1 + sup_t ||X^eps_t||)^2, uniform over 0 < eps <= epsilon_max.

    Pathwise, drift steps multiply 1+||x|| by at most exp(b0 h) with
    b0 = C + sum_j ||G_j||_0 mass_j, and a jump in cell j by 1 + eps ||G_j||_0.
    Taking the Poisson expectation of the squared product gives the bound.
    """
    n0 = system.diffusion.norm0_bounds()
    m = system.marks.masses
    T = g.grid.T
    b0 = system.drift.C + float(np.sum(n0 * m))
    jump_term = float(np.sum(g.values * m[None, :] * (2.0 * n0 + epsilon_max * n0**2)[None, :]) * g.grid.dt)
    return (1.0 + float(np.linalg.norm(system.x0))) ** 2 * np.exp(2.0 * b0 * T + jump_term)
