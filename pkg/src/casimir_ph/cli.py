"""Command-line scenario runner.

``casimir-ph simulate`` integrates a scenario and writes CSV data files;
``casimir-ph verify`` runs the structural checks and writes a residual report.

Exit codes: 0 success, 1 configuration error, 2 numerical blow-up,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checks import CheckResult, default_decomposition, gradient_study, power_study
from .config import SCENARIOS, ConfigError, build_equilibrium, build_gains, build_plant, parse_config
from .control import (
    ControlError,
    casimir_residuals_prop1,
    casimir_residuals_prop2,
    desired_beam_shape,
    desired_plate_shape,
    slope_mismatch,
    synthesize_beam_controller,
    synthesize_plate_controller,
)
from .grid import GridError, csv_digits, write_field_csv
from .plants import BeamPlant, PlantError, PlantModel
from .simulation import BlowUpError, ClosedLoop, ClosedLoopState, Trajectory, simulate, stability_dt

log = logging.getLogger("casimir_ph")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_VERIFY = 0, 1, 2, 3
CHECKS = ("casimir", "decomposition", "gradient", "power")
TRAJECTORY_HEADER = ["t", "H", "Hc", "Hcl", "dHcl", "C1_drift", "C2_drift", "eq_error", "u1", "u2"]

DISSIPATION_RTOL = 1e-9
CASIMIR_RTOL = 1e-8
CONSERVATION_RTOL = 1e-5
BEAM_SETTLE = 0.01
PLATE_EQ_MAX = 0.15
PLATE_EQ_REDUCTION = 5.0

BUILD_ERRORS = (ConfigError, PlantError, ControlError, GridError)


@dataclass
class Scenario:
    cfg: dict
    system: ClosedLoop
    state0: ClosedLoopState
    notes: list[str] = field(default_factory=list)

    @property
    def closed(self) -> bool:
        return self.system.ctrl is not None


def initial_deflection(plant: PlantModel, amplitude: float) -> np.ndarray:
    """Static deflection under a smooth load, scaled to peak ``amplitude``.

    The plate carries a uniform load; the free beam a self-equilibrated
    ``cos(2 pi z / L)`` load, solved in the least-squares sense so that the
    rigid-body part is zero.
    """
    g = plant.grid
    if isinstance(plant, BeamPlant):
        load = np.cos(2 * np.pi * g.coords() / g.length)
    else:
        load = np.ones(g.shape)
    free = ~plant.fixed.ravel()
    K = plant.stiffness.toarray()[np.ix_(free, free)]
    f = (plant.weights * load).ravel()[free]
    w = np.zeros(g.size)
    w[free] = np.linalg.lstsq(K, f, rcond=None)[0]
    w = w.reshape(g.shape)
    return amplitude * w / np.abs(w).max()


def build_scenario(cfg: dict) -> Scenario:
    plant = build_plant(cfg)
    shape = plant.grid.shape
    w0 = np.zeros(shape)
    if cfg["initial"]["shape"] == "load":
        w0 = initial_deflection(plant, cfg["initial"]["amplitude"])
    notes = []
    if not cfg["scenario"].endswith("casimir"):
        system = ClosedLoop(plant)
        return Scenario(cfg, system, ClosedLoopState(w0, np.zeros(shape), np.zeros(0)), notes)
    eq = build_equilibrium(cfg)
    gains = build_gains(cfg)
    if isinstance(plant, BeamPlant):
        ctrl, spec = synthesize_beam_controller(plant, eq, gains, w0)
        wd = desired_beam_shape(eq, plant.grid)
    else:
        ctrl, spec, ff = synthesize_plate_controller(plant, eq, gains, w0)
        wd = desired_plate_shape(eq, plant.grid)
        jump = slope_mismatch(eq)
        if abs(jump) > 1e-12:
            notes.append(f"target shape has a slope jump of {jump:.6g} at z1 = {eq.zb1}")
        notes.append(
            f"feedforward us = ({ff.us[0]:.6g}, {ff.us[1]:.6g}), "
            f"relative static residual {ff.relative_residual:.6g}"
        )
    system = ClosedLoop(plant, ctrl, spec, wd)
    return Scenario(cfg, system, ClosedLoopState(w0, np.zeros(shape), ctrl.xc.copy()), notes)


def resolve_dt(cfg: dict, plant: PlantModel) -> float:
    sim = cfg["simulation"]
    if sim["dt"] == "auto":
        return stability_dt(plant, sim["safety"])
    return float(sim["dt"])


def _fmt(x) -> str:
    return f"%.{csv_digits()}g" % x


def write_trajectory(path: Path, traj: Trajectory) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRAJECTORY_HEADER)
        for r in traj.records:
            drift = list(r.casimir_drift) + [math.nan] * (2 - len(r.casimir_drift))
            row = [r.t, r.H, r.Hc, r.Hcl, r.dHcl, *drift[:2], r.eq_error, *r.u[:2]]
            out.writerow([_fmt(v) for v in row])
    return path


def emit_plot_data(traj: Trajectory, scenario: Scenario, out_dir) -> list[Path]:
    """Write the trajectory, the final deflection and the edge trace as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = scenario.system.plant.grid
    files = [
        write_trajectory(out / "trajectory.csv", traj),
        write_field_csv(out / "w_final.csv", grid, traj.final.w),
    ]
    edge = out / "edge_trace.csv"
    with open(edge, "w", newline="", encoding="utf-8") as fh:
        for r, trace in zip(traj.records, traj.edge_trace):
            fh.write(",".join(_fmt(v) for v in (r.t, *trace)) + "\n")
    files.append(edge)
    return files


def trajectory_checks(scenario: Scenario, traj: Trajectory) -> list[CheckResult]:
    recs = traj.records
    first, last = recs[0], recs[-1]
    if not scenario.closed:
        drift = abs(last.H - first.H) / max(first.H, 1e-300)
        return [CheckResult("energy_conservation", drift, CONSERVATION_RTOL, drift <= CONSERVATION_RTOL)]
    tau = DISSIPATION_RTOL * max(1.0, first.Hcl)
    worst = max(r.dHcl for r in recs)
    scale = np.maximum(1.0, np.abs(traj.c0))
    drift = max(float(np.max(np.abs(r.casimir_drift) / scale)) for r in recs)
    checks = [
        CheckResult("dissipation", worst, tau, worst <= tau),
        CheckResult("casimir_drift", drift, CASIMIR_RTOL, drift <= CASIMIR_RTOL),
    ]
    plant = scenario.system.plant
    if isinstance(plant, BeamPlant):
        wd = scenario.system.wd
        errs = [
            abs(traj.final.w[n] - wd[n]) / max(abs(wd[n]), 0.01) for n in plant.nodes
        ]
        worst_settle = max(errs)
        checks.append(CheckResult("regulation", worst_settle, BEAM_SETTLE, worst_settle <= BEAM_SETTLE))
    else:
        e0, eT = first.eq_error, last.eq_error
        ok = eT <= PLATE_EQ_MAX and eT * PLATE_EQ_REDUCTION <= e0
        checks.append(
            CheckResult("regulation", eT, PLATE_EQ_MAX, ok, f"eq_error {e0:.6g} -> {eT:.6g}")
        )
    return checks


def run_simulate(cfg: dict, out_dir: Path) -> int:
    t_start = time.perf_counter()
    scenario = build_scenario(cfg)
    for note in scenario.notes:
        log.warning(note)
    sim = cfg["simulation"]
    dt = resolve_dt(cfg, scenario.system.plant)
    try:
        traj = simulate(
            scenario.system, scenario.state0, sim["t_final"], dt,
            int(sim["log_every"]), sim["integrator"],
        )
    except BlowUpError as exc:
        log.error("numerical blow-up: %s", exc)
        return EXIT_BLOWUP
    files = emit_plot_data(traj, scenario, out_dir)
    checks = trajectory_checks(scenario, traj)
    report = {
        "scenario": cfg["scenario"],
        "config": cfg,
        "dt": traj.dt,
        "steps": traj.steps,
        "notes": scenario.notes,
        "checks": [vars(c) | {"passed": bool(c.passed)} for c in checks],
        "files": [p.name for p in files],
        "wall_clock_s": time.perf_counter() - t_start,
    }
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, default=float) + "\n", encoding="utf-8")
    for c in checks:
        log.info("%-20s %s  value=%.3e tol=%.3e %s", c.name, "pass" if c.passed else "FAIL",
                 c.value, c.tolerance, c.detail)
    return EXIT_OK


def casimir_rows(cfg: dict) -> list[tuple]:
    """Synthesize the scenario's controller and evaluate the invariant conditions."""
    if not cfg["scenario"].endswith("casimir"):
        cfg = dict(cfg, scenario=cfg["scenario"].replace("open-loop", "casimir"))
        cfg["initial"] = dict(cfg["initial"], shape="rest")
    try:
        system = build_scenario(cfg).system
    except ControlError as exc:
        return [("casimir", "synthesis", math.inf, 0.0, False, str(exc))]
    verifier = casimir_residuals_prop2 if isinstance(system.plant, BeamPlant) else casimir_residuals_prop1
    report = verifier(system.plant, system.ctrl, system.spec)
    rows = [("casimir", r.condition, r.norm, r.tolerance, r.passed, "") for r in report.rows]
    rows.append(("casimir", "rank", report.rank, report.n_casimirs, not report.degenerate, ""))
    return rows


def run_verify(cfg: dict, checks: list[str], out_dir: Path) -> int:
    plant = build_plant(cfg)
    rows: list[tuple] = []
    for name in checks:
        if name == "casimir":
            rows.extend(casimir_rows(cfg))
            continue
        study = {"decomposition": default_decomposition, "gradient": gradient_study, "power": power_study}[name]
        res = study(plant)
        rows.append((name, res.name, res.value, res.tolerance, res.passed, res.detail))
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "residuals.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["check", "condition", "norm", "tolerance", "pass", "detail"])
        for check, cond, norm, tol, ok, detail in rows:
            out.writerow([check, cond, _fmt(norm), _fmt(tol), "pass" if ok else "fail", detail])
    failed = [r for r in rows if not r[4]]
    for r in failed:
        log.error("check %s/%s failed: %.3e > %.3e %s", r[0], r[1], r[2], r[3], r[5])
    return EXIT_VERIFY if failed else EXIT_OK


def _dt_arg(text: str):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"dt must be 'auto' or a number, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casimir-ph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--scenario", choices=SCENARIOS)
        p.add_argument("--config", type=Path, help="JSON scenario file")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--grid-n", type=int, help="nodes per side (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            p.add_argument("--dt", type=_dt_arg, help="time step or 'auto'")
            p.add_argument("--t-final", type=float)
            p.add_argument("--log-every", type=int)
        else:
            p.add_argument("--check", action="append", choices=CHECKS,
                           help="check to run (repeatable, default all)")
    return parser


def _overrides(args, scenario: str) -> dict:
    out: dict = {}
    if args.grid_n is not None:
        out["grid"] = {"n1": args.grid_n, "n2": args.grid_n} if scenario.startswith("plate") else {"n": args.grid_n}
    sim = {}
    for key, attr in (("dt", "dt"), ("t_final", "t_final"), ("log_every", "log_every")):
        value = getattr(args, attr, None)
        if value is not None:
            sim[key] = value
    if sim:
        out["simulation"] = sim
    if args.out is not None:
        out["output"] = {"dir": str(args.out)}
    return out


def _scenario_name(args) -> str | None:
    if args.scenario is not None:
        return args.scenario
    if args.config is not None:
        try:
            return json.loads(Path(args.config).read_text(encoding="utf-8") or "{}").get("scenario")
        except (OSError, json.JSONDecodeError, AttributeError):
            return None
    return None


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        name = _scenario_name(args)
        if name is None:
            raise ConfigError("scenario: give --scenario or a config naming one")
        cfg = parse_config(args.config, args.scenario, _overrides(args, name))
        out_dir = Path(cfg["output"]["dir"])
        if args.command == "simulate":
            return run_simulate(cfg, out_dir)
        return run_verify(cfg, args.check or list(CHECKS), out_dir)
    except BUILD_ERRORS as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
