"""Command-line runner.

    jumpldp run CONFIG                      action taken from the config
    jumpldp skeleton --config NAME|PATH     action given on the command line
    jumpldp list-examples

Exit status: 0 success, 2 a validation suite failed, 1 any other error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ACTIONS, ConfigError, ExperimentConfig, LaplaceCfg, LdpScanCfg, RateCfg, SimulateCfg,
                     SkeletonCfg, ValidateCfg, VariationalCfg, bundled_names, bundled_text, build_functional,
                     build_opt, load_config)
from .ldp import LAPLACE_HEADER, SCAN_HEADER, default_levels, estimate_rate, laplace_check, ldp_scan, write_table
from .measure import TimeGrid
from .prm import RNG_ALGORITHM, SeededRng, sample_small_noise_prm
from .solver import (default_monitor_tol, energy_monitor, ito_monitor, skeleton_apriori_bound, skeleton_forcing,
                     solve_mild, solve_skeleton)
from .validators import CountFunctional, validate_system, validate_variational_representation, \
    validate_weak_convergence

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION = 0, 1, 2
SUITES = ("system", "weak-convergence", "variational")

DEFAULT_SECTIONS = {
    "simulate": lambda: SimulateCfg(epsilon=0.1),
    "skeleton": SkeletonCfg,
    "rate": RateCfg,
    "ldp_scan": lambda: LdpScanCfg(epsilons=[0.2, 0.1, 0.05], n_samples=10000),
    "laplace": lambda: LaplaceCfg(epsilons=[0.2, 0.1], n_samples=10000),
    "validate": ValidateCfg,
}


class Run:
    """One action execution: resolved config, seed, output dir and manifest."""

    def __init__(self, cfg: ExperimentConfig, action: str, seed: int, out: Path, jobs: int,
                 dump_path: bool, dump_points: bool):
        self.cfg, self.action, self.seed, self.out, self.jobs = cfg, action, seed, out, jobs
        self.dump_path, self.dump_points = dump_path, dump_points
        self.section = cfg.section(action) or DEFAULT_SECTIONS[action]()
        self.artifacts: list[str] = []
        self.system = cfg.build_system()
        self.solver = cfg.build_solver()
        self.rng = SeededRng(seed)

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def manifest(self, status: str) -> dict:
        import pydantic
        import scipy

        digests = {}
        for name in self.artifacts:
            p = self.out / name
            if p.is_file():
                digests[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        return {
            "config_name": self.cfg.name,
            "config_sha256": self.cfg.sha256(),
            "action": self.action,
            "section": self.section.model_dump(mode="json"),
            "seed": self.seed,
            "rng": RNG_ALGORITHM,
            "jobs": self.jobs,
            "status": status,
            "artifacts": digests,
            "versions": {"jumpldp": __version__, "python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "pydantic": pydantic.VERSION},
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }


def _control_grid(run: Run, opt_cfg) -> TimeGrid | None:
    if opt_cfg.control_steps is None:
        return None
    return TimeGrid(run.cfg.grid.T, opt_cfg.control_steps)


def do_simulate(run: Run) -> int:
    sec = run.section
    g = run.cfg.build_control(run.system.marks)
    rows, points = [], []
    for k in range(sec.n_paths):
        rng = run.rng.child(k)
        pattern = sample_small_noise_prm(sec.epsilon, g, rng)
        path = solve_mild(run.system, sec.epsilon, g, run.solver, pattern=pattern)
        path.metadata["seed"] = run.seed
        path.metadata["path_index"] = k
        tol = run.solver.monitor_tol or default_monitor_tol(path, run.solver.grid.dt)
        viol = ito_monitor(path, run.system)
        rows.append((k, *path.terminal, path.sup_norm, len(pattern), viol, tol))
        if run.dump_path:
            path.to_csv(run.path(f"path_{k}.csv"))
            path.dump_json(run.path(f"path_{k}.json"))
        if run.dump_points:
            points.append({"path_index": k, "points": pattern.to_json()})
    d = run.system.dim
    header = ("path", *[f"xT{i}" for i in range(d)], "sup_norm", "n_jumps", "ito_violation", "monitor_tol")
    write_table(run.path("simulate.csv"), header, rows)
    if run.dump_points:
        run.write_json("points.json", points)
    return EXIT_OK


def do_skeleton(run: Run) -> int:
    g = run.cfg.build_control(run.system.marks)
    path = solve_skeleton(run.system, g, run.solver, initial_guess=run.section.initial_guess)
    path.to_csv(run.path("skeleton.csv"))
    if run.dump_path:
        path.dump_json(run.path("skeleton.json"))
    grid = run.solver.grid
    viol = energy_monitor(path, skeleton_forcing(run.system, g, grid))
    tol = run.solver.monitor_tol or default_monitor_tol(path, grid.dt)
    bound = skeleton_apriori_bound(run.system, g, grid)
    run.write_json("skeleton_report.json", {
        "terminal": path.terminal.tolist(), "sup_norm": path.sup_norm,
        "picard_distances": path.metadata["picard_distances"],
        "energy_violation": float(viol), "monitor_tol": float(tol), "energy_ok": bool(viol <= tol),
        "apriori_bound": float(bound), "apriori_ok": bool(path.sup_norm <= bound),
        "control_id": g.control_id,
    })
    return EXIT_OK


def _rate(run: Run, opt_cfg):
    return estimate_rate(run.system, run.cfg.build_event(), run.solver, build_opt(opt_cfg), _control_grid(run, opt_cfg))


def do_rate(run: Run) -> int:
    est = _rate(run, run.section.optimizer)
    run.write_json("rate.json", est.to_json())
    run.path("rate_trace.csv").write_text(est.trace_csv(), encoding="utf-8")
    return EXIT_OK


def do_ldp_scan(run: Run) -> int:
    sec = run.section
    est = _rate(run, sec.optimizer)
    run.write_json("rate.json", est.to_json())
    rows = ldp_scan(run.system, run.cfg.build_event(), sec.epsilons, est, sec.n_samples, run.rng,
                    run.solver, speed=sec.speed, jobs=run.jobs)
    write_table(run.path("ldp_scan.csv"), SCAN_HEADER, rows)
    return EXIT_OK


def do_laplace(run: Run) -> int:
    sec = run.section
    h = build_functional(sec.functional)
    levels = sec.levels or default_levels(h)
    rows = laplace_check(run.system, h, sec.epsilons, levels, sec.n_samples, run.rng, run.solver,
                         build_opt(sec.optimizer), sec.speed, _control_grid(run, sec.optimizer), run.jobs)
    write_table(run.path("laplace.csv"), LAPLACE_HEADER, rows)
    return EXIT_OK


def do_validate(run: Run) -> int:
    sec = run.section
    reports = []
    for k, suite in enumerate(sec.suites):
        rng = run.rng.child(k)
        if suite == "system":
            rep = validate_system(run.system, run.cfg.grid.T, run.cfg.build_sampler(run.seed))
        elif suite == "weak-convergence":
            w = sec.weak
            g = run.cfg.build_control(run.system.marks)
            rep = validate_weak_convergence(run.system, g, w.epsilons, w.n_seeds, rng, run.solver, w.threshold,
                                            w.slope_range, run.jobs)
        else:
            v: VariationalCfg = sec.variational
            rep = validate_variational_representation(run.system.marks, run.solver.grid,
                                                      CountFunctional(v.scale, v.cap, v.offset), v.theta,
                                                      v.n_samples, rng, K=v.K, gap_bound=v.gap_bound)
        reports.append(rep)
        rows = [(e.name, e.value, e.bound, int(e.passed)) for e in rep.entries]
        write_table(run.path(f"validate_{suite}.csv"), ("check", "value", "bound", "pass"), rows)
    run.write_json("validation.json", [r.to_json() for r in reports])
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {rep.suite}")
        for e in rep.failures():
            print(f"  {e.name}: {e.value:.6g} vs bound {e.bound:.6g}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VALIDATION


HANDLERS = {"simulate": do_simulate, "skeleton": do_skeleton, "rate": do_rate, "ldp_scan": do_ldp_scan,
            "laplace": do_laplace, "validate": do_validate}


def execute(cfg: ExperimentConfig, action: str | None, args) -> int:
    declared = cfg.actions()
    if action is None:
        if len(declared) != 1:
            raise ConfigError(f"config must declare exactly one action section, found {declared or 'none'}")
        action = declared[0]
    elif declared and declared != [action]:
        raise ConfigError(f"config declares {declared}, not {action!r}")
    seed = cfg.seed if args.seed is None else args.seed
    suites = getattr(args, "suite", None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, action, seed, out, max(1, args.jobs), args.dump_path, args.dump_points)
    if suites:
        run.section = run.section.model_copy(update={"suites": list(dict.fromkeys(suites))})
    status = "error"
    try:
        code = HANDLERS[action](run)
        status = "ok" if code == EXIT_OK else "validation-failed"
        return code
    finally:
        (out / "manifest.json").write_text(json.dumps(run.manifest(status), indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for Monte Carlo sweeps")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--dump-path", action="store_true", help="write full path CSV/JSON")
    p.add_argument("--dump-points", action="store_true", help="write sampled point patterns as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumpldp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the single action declared in a config")
    p.add_argument("config")
    _common(p)
    for action in ACTIONS:
        p = sub.add_parser(action.replace("_", "-"), help=f"{action.replace('_', ' ')} action")
        p.add_argument("--config", required=True, help="config path or bundled example name")
        if action == "validate":
            p.add_argument("--suite", action="append", choices=SUITES,
                           help="suite to run (repeatable); overrides the config's list")
        _common(p)
    p = sub.add_parser("validate-config", help="parse and cross-validate a config without running it")
    p.add_argument("config")
    sub.add_parser("list-examples", help="list bundled configs")
    return parser


def list_examples() -> list[tuple[str, str]]:
    out = []
    for name in bundled_names():
        desc = json.loads(bundled_text(name)).get("description", "")
        out.append((name, desc))
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-examples":
            for name, desc in list_examples():
                print(f"{name}\t{desc}")
            return EXIT_OK
        if args.command == "validate-config":
            cfg = load_config(args.config)
            print(f"ok {cfg.name} sha256={cfg.sha256()}")
            return EXIT_OK
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.command == "run":
            cfg = load_config(args.config)
            return execute(cfg, None, args)
        cfg = load_config(args.config)
        return execute(cfg, args.command.replace("-", "_"), args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report, do not trace
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
