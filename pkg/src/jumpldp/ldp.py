"""Rate-function estimation, crude and importance-sampled Monte Carlo, and
the large-deviation / Laplace diagnostic tables.

The normalization ``speed`` controls the prefactor epsilon**speed in front of
log-probabilities.  For amplitude-epsilon noise driven by N^{1/epsilon} the
probabilities decay like exp(-I/epsilon), so the default is speed = 1.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .measure import ControlFunction, TimeGrid, cost_LT, entropy_l
from .prm import SeededRng, events_from_counts, log_likelihood_ratio_counts, sample_bin_counts
from .solver import SolverConfig, System, march_skeleton, march_skeleton_batch, solve_mild_batch

EVENT_KINDS = ("terminal-halfspace", "terminal-ball-complement", "supnorm-exceedance")
SCAN_HEADER = ("epsilon", "p_hat", "se", "eps2_log_p", "minus_I")
LAPLACE_HEADER = ("epsilon", "lhs", "lhs_se", "rhs", "gap")
CHUNK_SIZE = 5000


@dataclass(frozen=True, eq=False)
class EventSpec:
    """Path event, described through a signed residual s (s <= 0 inside).

    terminal-halfspace:       <X_T, direction> >= threshold
    terminal-ball-complement: ||X_T - center|| >= radius
    supnorm-exceedance:       sup_t ||X_t|| >= radius
    """

    kind: str
    direction: np.ndarray | None = None
    threshold: float = 0.0
    center: np.ndarray | None = None
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "terminal-halfspace":
            d = np.array(self.direction, dtype=float).ravel()
            if d.size == 0 or not np.any(d != 0):
                raise ValueError("half-space direction must be nonzero")
            object.__setattr__(self, "direction", d)
        if self.kind == "terminal-ball-complement":
            object.__setattr__(self, "center", np.array(self.center, dtype=float).ravel())
        if self.kind != "terminal-halfspace" and self.radius < 0:
            raise ValueError("radius must be nonnegative")

    @classmethod
    def halfspace(cls, direction, threshold: float) -> EventSpec:
        return cls("terminal-halfspace", direction=direction, threshold=threshold)

    @classmethod
    def ball_complement(cls, center, radius: float) -> EventSpec:
        return cls("terminal-ball-complement", center=center, radius=radius)

    @classmethod
    def supnorm(cls, radius: float) -> EventSpec:
        return cls("supnorm-exceedance", radius=radius)

    def residual(self, terminal, sup_norm) -> np.ndarray:
        terminal = np.asarray(terminal, dtype=float)
        if self.kind == "terminal-halfspace":
            with np.errstate(invalid="ignore"):
                return (self.threshold - terminal @ self.direction) / np.linalg.norm(self.direction)
        if self.kind == "terminal-ball-complement":
            return self.radius - np.linalg.norm(terminal - self.center, axis=-1)
        return self.radius - np.asarray(sup_norm, dtype=float)

    def contains(self, terminal, sup_norm) -> np.ndarray:
        return self.residual(terminal, sup_norm) <= 0

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "terminal-halfspace":
            out.update(direction=self.direction.tolist(), threshold=self.threshold)
        elif self.kind == "terminal-ball-complement":
            out.update(center=self.center.tolist(), radius=self.radius)
        else:
            out.update(radius=self.radius)
        return out


@dataclass(frozen=True)
class OptConfig:
    """Penalized projected coordinate descent settings.

    ``multiplier_rounds`` > 0 adds a shifted-penalty (augmented Lagrangian)
    multiplier per penalty stage, which keeps coordinate descent well
    conditioned; 0 gives the plain quadratic penalty.
    """

    rho_schedule: tuple[float, ...] = tuple(10.0**k for k in range(6))
    starts: tuple[float, ...] = (1.0, 0.5, 2.0, 4.0, 8.0)
    max_sweeps: int = 40
    multiplier_rounds: int = 4
    fd_step: float = 1e-6
    tol: float = 1e-10
    feasibility_tol: float = 1e-3
    g_max: float = 1e3

    def __post_init__(self):
        if not self.rho_schedule or any(r <= 0 for r in self.rho_schedule):
            raise ValueError("rho_schedule must be nonempty and positive")
        if not self.starts or any(t < 0 for t in self.starts):
            raise ValueError("starts must be nonempty and nonnegative")


@dataclass
class RateEstimate:
    value: float
    control: ControlFunction
    penalty_residual: float
    feasible: bool
    optimizer_trace: list = field(default_factory=list)
    starts: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "value": self.value if math.isfinite(self.value) else "inf",
            "feasible": self.feasible,
            "penalty_residual": self.penalty_residual,
            "control": self.control.to_json(),
            "starts": self.starts,
            "optimizer_trace": [list(r) for r in self.optimizer_trace],
        }

    def trace_csv(self) -> str:
        return format_table(("start", "stage", "sweep", "cost", "penalty"), self.optimizer_trace)


def _skeleton_residual(system: System, event: EventSpec, g: ControlFunction, grid: TimeGrid) -> float:
    path = march_skeleton(system, g, grid)
    return float(event.residual(path[-1], np.linalg.norm(path, axis=1).max()))


def _solve_1d(w, s, a, g0, rho, g_max):
    """argmin_y  w l(y) + rho max(0, s + a (y - g0))^2  over 0 < y <= g_max."""
    if a == 0.0 or rho == 0.0:
        return min(1.0, g_max)

    def dpsi(u):
        return w * u + 2.0 * rho * a * max(0.0, s + a * (math.exp(u) - g0))

    lo, hi = math.log(1e-12), math.log(g_max)
    if dpsi(hi) <= 0:
        return g_max
    if dpsi(lo) >= 0:
        return 1e-12
    return math.exp(brentq(dpsi, lo, hi, xtol=1e-13))


def estimate_rate(system: System, event: EventSpec, cfg: SolverConfig, opt: OptConfig = OptConfig(),
                  control_grid: TimeGrid | None = None) -> RateEstimate:
    """Minimize L_T(g) + rho dist(skeleton(g), event)^2 over controls, rho increasing.

    Every sweep takes forward-difference derivatives of the event residual s
    in each coordinate (one batched skeleton march), then runs Gauss-Seidel
    over the coordinates, each minimizing its convex 1-D model exactly and
    clamped to [0, g_max].  The sweep's step is kept only if the true
    objective decreases, halving it otherwise.  Within a stage the penalty
    is shifted by mu/rho with mu <- max(0, mu + rho s) between rounds, and
    the schedule stops early once the iterate is feasible and the cost has
    settled.  Returns the cheapest feasible candidate over all starts, or
    value inf if none is within ``feasibility_tol``.
    """
    grid = cfg.grid
    cgrid = control_grid or grid
    marks = system.marks
    ones = ControlFunction.constant(cgrid, marks, 1.0)
    s0 = _skeleton_residual(system, event, ones, grid)
    if s0 <= 0:
        return RateEstimate(0.0, ones, 0.0, True, [], [{"start": "zero-control", "cost": 0.0, "residual": s0}])

    w = marks.masses[None, :] * cgrid.dt * np.ones((cgrid.n_steps, marks.n_cells))
    active = np.argwhere(w > 0)
    wa = w[active[:, 0], active[:, 1]]
    m = active.shape[0]
    trace, summary, candidates = [], [], []

    def resid_batch(vals):
        paths = march_skeleton_batch(system, vals, cgrid, grid)
        return event.residual(paths[:, -1], np.linalg.norm(paths, axis=2).max(axis=1))

    def resid(vals):
        return float(resid_batch(vals[None])[0])

    for start in opt.starts:
        G = np.ones((cgrid.n_steps, marks.n_cells))
        G[active[:, 0], active[:, 1]] = start
        cost = _cost_of(G, w)
        s = resid(G)
        mu = 0.0
        prev_cost = math.inf
        for stage, rho in enumerate(opt.rho_schedule):
            for _round in range(max(1, opt.multiplier_rounds)):
                shift = mu / rho
                obj = cost + 0.5 * rho * max(0.0, s + shift) ** 2
                for sweep in range(opt.max_sweeps):
                    gv = G[active[:, 0], active[:, 1]]
                    h = opt.fd_step * np.maximum(1.0, gv)
                    P = np.repeat(G[None], m, axis=0)
                    P[np.arange(m), active[:, 0], active[:, 1]] += h
                    a = (resid_batch(P) - s) / h
                    y = gv.copy()
                    s_lin = s
                    for k in range(m):
                        yk = _solve_1d(wa[k], s_lin + shift, a[k], y[k], 0.5 * rho, opt.g_max)
                        s_lin += a[k] * (yk - y[k])
                        y[k] = yk
                    step = y - gv
                    accepted = False
                    t = 1.0
                    for _ in range(10):
                        Gc = G.copy()
                        Gc[active[:, 0], active[:, 1]] = np.clip(gv + t * step, 0.0, opt.g_max)
                        s_new = resid(Gc)
                        c_new = _cost_of(Gc, w)
                        obj_new = c_new + 0.5 * rho * max(0.0, s_new + shift) ** 2
                        if obj_new <= obj:
                            accepted = True
                            break
                        t *= 0.5
                    if not accepted:
                        break
                    decrease = obj - obj_new
                    G, cost, s, obj = Gc, c_new, s_new, obj_new
                    trace.append((start, stage, sweep, cost, max(0.0, s)))
                    if decrease <= opt.tol * (1.0 + abs(obj)):
                        break
                if opt.multiplier_rounds == 0:
                    break
                mu = max(0.0, mu + rho * s)
            if max(0.0, s) <= 1e-3 * opt.feasibility_tol and abs(prev_cost - cost) <= 1e-9 * (1.0 + cost):
                break
            prev_cost = cost
        dist = max(0.0, s)
        summary.append({"start": start, "cost": cost, "residual": s, "multiplier": mu})
        candidates.append((dist <= opt.feasibility_tol, cost, dist, G.copy()))

    feasible = [c for c in candidates if c[0]]
    if feasible:
        _, cost, dist, G = min(feasible, key=lambda c: c[1])
        return RateEstimate(cost, ControlFunction(cgrid, marks, G), dist, True, trace, summary)
    _, cost, dist, G = min(candidates, key=lambda c: c[2])
    return RateEstimate(math.inf, ControlFunction(cgrid, marks, G), dist, False, trace, summary)


def _cost_of(values, weights) -> float:
    return float(np.sum(entropy_l(values) * weights))


# --- Monte Carlo -----------------------------------------------------------

def _run_chunk(args):
    system, epsilon, tilt, grid, n, rng, reference = args
    counts = sample_bin_counts(tilt, rng, n, 1.0 / epsilon)
    ev_t, ev_c = events_from_counts(tilt.grid, counts, rng)
    out = solve_mild_batch(system, epsilon, grid, ev_t, ev_c, reference)
    out["log_weight"] = log_likelihood_ratio_counts(counts, tilt, 1.0 / epsilon)
    return out


def simulate_batch(system: System, epsilon: float, cfg: SolverConfig, n_samples: int, rng: SeededRng,
                   tilt: ControlFunction | None = None, reference=None, jobs: int = 1,
                   chunk_size: int = CHUNK_SIZE) -> dict:
    """Simulate ``n_samples`` small-noise paths under intensity tilt/epsilon.

    Samples are split into fixed chunks; chunk k draws from ``rng.child(k)``
    so results do not depend on ``jobs``.  Returns per-sample terminal
    states, sup norms, log likelihood ratios dP/dP^tilt (and sup distances
    to ``reference`` grid states when given).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    tilt = tilt or ControlFunction.constant(cfg.grid, system.marks, 1.0)
    sizes = [min(chunk_size, n_samples - k) for k in range(0, n_samples, chunk_size)]
    tasks = [(system, epsilon, tilt, cfg.grid, size, rng.child(k), reference) for k, size in enumerate(sizes)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    else:
        parts = [_run_chunk(t) for t in tasks]
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def is_probability(system: System, epsilon: float, event: EventSpec, g_tilt: ControlFunction, n_samples: int,
                   rng: SeededRng, cfg: SolverConfig, jobs: int = 1):
    """Importance-sampled P(X^eps in event) under intensity g_tilt/epsilon; (p_hat, se)."""
    sims = simulate_batch(system, epsilon, cfg, n_samples, rng, g_tilt, jobs=jobs)
    hit = event.contains(sims["terminal"], sims["sup_norm"])
    vals = np.where(hit, np.exp(sims["log_weight"]), 0.0)
    n = vals.size
    p = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return p, se


def mc_probability(system: System, epsilon: float, event: EventSpec, n_samples: int, rng: SeededRng,
                   cfg: SolverConfig, jobs: int = 1):
    """Crude Monte Carlo estimate (p_hat, binomial standard error)."""
    ones = ControlFunction.constant(cfg.grid, system.marks, 1.0)
    sims = simulate_batch(system, epsilon, cfg, n_samples, rng, ones, jobs=jobs)
    hit = event.contains(sims["terminal"], sims["sup_norm"])
    p = float(hit.mean())
    return p, math.sqrt(p * (1.0 - p) / hit.size)


def ldp_scan(system: System, event: EventSpec, epsilons: Sequence[float], rate: RateEstimate,
             n_samples: int, rng: SeededRng, cfg: SolverConfig, speed: float = 1.0,
             tilt: ControlFunction | None = None, jobs: int = 1):
    """Rows (epsilon, p_hat, se, eps^speed log p_hat, -I) with the rate control as IS tilt.

    Zero-hit rows carry log p = -inf: only an upper bound on p is known there.
    """
    if tilt is None:
        tilt = rate.control if rate.feasible and math.isfinite(rate.value) else None
    rows = []
    for k, eps in enumerate(epsilons):
        child = rng.child(k)
        if tilt is None:
            p, se = mc_probability(system, eps, event, n_samples, child, cfg, jobs)
        else:
            p, se = is_probability(system, eps, event, tilt, n_samples, child, cfg, jobs)
        norm_log = eps**speed * math.log(p) if p > 0 else -math.inf
        rows.append((float(eps), p, se, norm_log, -rate.value))
    return rows


def format_table(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_table(path, header, rows) -> str:
    text = format_table(header, rows)
    Path(path).write_text(text, encoding="utf-8")
    return text


# --- Laplace principle -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class LaplaceFunctional:
    """Bounded functional h = clip(offset + scale * q, lo, hi).

    q is <X_T, direction> for kind "terminal" and sup_t ||X_t|| for
    kind "supnorm".  Clipping makes every member bounded.
    """

    kind: str = "terminal"
    scale: float = 1.0
    offset: float = 0.0
    lo: float = 0.0
    hi: float = 1.0
    direction: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("terminal", "supnorm"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo <= self.hi):
            raise ValueError("clipping bounds must be finite with lo <= hi")

    @classmethod
    def constant(cls, c: float) -> LaplaceFunctional:
        return cls("terminal", scale=0.0, offset=c, lo=c, hi=c)

    def _direction(self, d: int) -> np.ndarray:
        if self.direction is None:
            e = np.zeros(d)
            e[0] = 1.0
            return e
        return np.asarray(self.direction, dtype=float)

    def statistic(self, terminal, sup_norm):
        terminal = np.asarray(terminal, dtype=float)
        if self.kind == "terminal":
            return terminal @ self._direction(terminal.shape[-1])
        return np.asarray(sup_norm, dtype=float)

    def __call__(self, terminal, sup_norm):
        return np.clip(self.offset + self.scale * self.statistic(terminal, sup_norm), self.lo, self.hi)

    def to_json(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "offset": self.offset, "lo": self.lo,
                "hi": self.hi, "direction": None if self.direction is None else list(self.direction)}


def default_levels(h: LaplaceFunctional, n: int = 8) -> list[float]:
    """Statistic values where h runs across its clipping range."""
    if h.scale == 0.0:
        return []
    return [float((c - h.offset) / h.scale) for c in np.linspace(h.lo, h.hi, n)]


def laplace_rhs(system: System, h: LaplaceFunctional, levels: Sequence[float], cfg: SolverConfig,
                opt: OptConfig = OptConfig(), control_grid: TimeGrid | None = None):
    """Upper estimate of inf_phi {h(phi) + I(phi)} over computed rate minimizers.

    For each target level c of the functional's statistic q, the cheapest
    control pushing q past c (above or below the zero-control value) is
    found with :func:`estimate_rate`; the candidate value is
    h(skeleton(g)) + L_T(g).  Returns (value, control achieving it).
    """
    grid = cfg.grid
    cgrid = control_grid or grid
    ones = ControlFunction.constant(cgrid, system.marks, 1.0)
    path0 = march_skeleton(system, ones, grid)
    sup0 = float(np.linalg.norm(path0, axis=1).max())
    best = (float(h(path0[-1], sup0)), ones)
    if h.scale == 0.0:
        return best
    q0 = float(h.statistic(path0[-1], sup0))
    d = system.dim
    for c in levels:
        if h.kind == "terminal":
            u = h._direction(d)
            if c > q0:
                event = EventSpec.halfspace(u, c)
            elif c < q0:
                event = EventSpec.halfspace(-u, -c)
            else:
                continue
        else:
            if c <= q0:
                continue
            event = EventSpec.supnorm(c)
        est = estimate_rate(system, event, cfg, opt, cgrid)
        if not est.feasible:
            continue
        path = march_skeleton(system, est.control, grid)
        val = float(h(path[-1], np.linalg.norm(path, axis=1).max())) + cost_LT(est.control)
        if val < best[0]:
            best = (val, est.control)
    return best


def laplace_check(system: System, h: LaplaceFunctional, epsilons: Sequence[float], levels: Sequence[float],
                  n_samples: int, rng: SeededRng, cfg: SolverConfig, opt: OptConfig = OptConfig(),
                  speed: float = 1.0, control_grid: TimeGrid | None = None, jobs: int = 1):
    """Rows (epsilon, lhs, lhs_se, rhs, |lhs - rhs|).

    lhs = -eps^speed log E exp(-h(X^eps)/eps^speed), estimated with the
    minimizing control of the right side as importance-sampling tilt;
    rhs = inf {h + I} from :func:`laplace_rhs`.
    """
    rhs, tilt = laplace_rhs(system, h, levels, cfg, opt, control_grid)
    rows = []
    for k, eps in enumerate(epsilons):
        sims = simulate_batch(system, eps, cfg, n_samples, rng.child(k), tilt, jobs=jobs)
        scale = eps**speed
        expo = sims["log_weight"] - h(sims["terminal"], sims["sup_norm"]) / scale
        n = expo.size
        log_mean = float(logsumexp(expo) - math.log(n))
        rel = np.exp(expo - log_mean)
        rel_se = float(rel.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        lhs = -scale * log_mean
        rows.append((float(eps), lhs, scale * rel_se, rhs, abs(lhs - rhs)))
    return rows
