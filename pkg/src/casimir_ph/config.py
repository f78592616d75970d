"""Scenario configuration: JSON files with a versioned schema and strict validation.

Every key has a default, so an empty file (or no file at all) gives the
reference configuration of the chosen scenario.  Unknown keys are rejected
with their full key path.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from pathlib import Path

import numpy as np

from .control import DesiredEquilibrium, Gains, beam_gains, plate_gains
from .grid import Grid1D, Grid2D
from .plants import BeamPlant, PatchGeometry, PiezoParams, PlatePlant

log = logging.getLogger(__name__)

SCHEMA = "casimir-ph/1"
SCENARIOS = ("plate-casimir", "beam-casimir", "plate-open-loop", "beam-open-loop")


class ConfigError(ValueError):
    """Unreadable or invalid scenario configuration."""


def _gains_dict(g: Gains) -> dict:
    return {
        "J34": g.J34, "R33": g.R33, "R34": g.R34, "R44": g.R44,
        "Mc": g.Mc.tolist(), "G34": g.G34.tolist(), "c": g.c.tolist(),
    }


def default_config(scenario: str) -> dict:
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario: unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}")
    plate = scenario.startswith("plate")
    closed = scenario.endswith("casimir")
    cfg = {
        "schema": SCHEMA,
        "scenario": scenario,
        "simulation": {
            "dt": "auto",
            "safety": 0.8,
            "t_final": 50.0,
            "log_every": 100,
            "integrator": "exact" if plate and closed else "rk4",
        },
        "initial": {"shape": "rest" if closed else "load", "amplitude": 0.01},
        "output": {"dir": f"runs/{scenario}"},
    }
    if plate:
        cfg["grid"] = {"n1": 21, "n2": 21, "L1": 1.0, "L2": 1.0}
        cfg["plate"] = {"rho_c_h_c": 1.0, "E_c_I_c": 1.0, "nu": 0.2, "damping": 0.0}
        cfg["patches"] = {"zp1": 0.25, "zp2": [0.1, 0.65], "Lp1": 0.25, "Lp2": 0.25}
        cfg["piezo"] = {"PsiP": 1.0, "a1": 1.0, "a2": 1.0, "sigma": 100.0, "rho_p_h_p": 1.0, "Xi_p": 1.0}
        cfg["controller"] = _gains_dict(plate_gains())
        cfg["equilibrium"] = {"a": 0.16, "b": 0.12, "c": 1.0, "d": 2.0, "zb1": 0.5}
    else:
        cfg["grid"] = {"n": 21, "length": 1.0}
        cfg["beam"] = {"rhoA": 1.0, "EI": 1.0, "actuators": [0.3, 0.7], "damping": 0.0}
        cfg["controller"] = _gains_dict(beam_gains())
        cfg["equilibrium"] = {"a": 0.1, "b": 0.05}
    return cfg


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _number(cfg, path, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False, integer=False):
    node = cfg
    for part in path.split("."):
        node = node[part]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {node!r}")
    if integer and int(node) != node:
        raise ConfigError(f"{path}: expected an integer, got {node!r}")
    if not math.isfinite(node):
        raise ConfigError(f"{path}: must be finite")
    bad_lo = node <= lo if lo_open else node < lo
    bad_hi = node >= hi if hi_open else node > hi
    if bad_lo or bad_hi:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(f"{path}: {node} outside {lb}{lo}, {hi}{rb}")
    return node


def _matrix(cfg, path, shape):
    node = cfg
    for part in path.split("."):
        node = node[part]
    try:
        arr = np.asarray(node, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: expected numbers") from exc
    if arr.shape != shape or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{path}: expected finite array of shape {shape}")
    return arr


def validate(cfg: dict) -> dict:
    if cfg.get("schema") != SCHEMA:
        raise ConfigError(f"schema: expected {SCHEMA!r}, got {cfg.get('schema')!r}")
    sim = cfg["simulation"]
    if sim["dt"] != "auto":
        _number(cfg, "simulation.dt", 0, lo_open=True)
    _number(cfg, "simulation.safety", 0, 1, lo_open=True)
    _number(cfg, "simulation.t_final", 0)
    _number(cfg, "simulation.log_every", 1, integer=True)
    if sim["integrator"] not in ("rk4", "exact"):
        raise ConfigError(f"simulation.integrator: expected 'rk4' or 'exact', got {sim['integrator']!r}")
    if cfg["initial"]["shape"] not in ("rest", "load"):
        raise ConfigError(f"initial.shape: expected 'rest' or 'load', got {cfg['initial']['shape']!r}")
    _number(cfg, "initial.amplitude")
    if not isinstance(cfg["output"]["dir"], str):
        raise ConfigError("output.dir: expected a string")

    if "plate" in cfg:
        for key in ("n1", "n2"):
            _number(cfg, f"grid.{key}", 9, integer=True)
        for key in ("L1", "L2"):
            _number(cfg, f"grid.{key}", 0, lo_open=True)
        _number(cfg, "plate.rho_c_h_c", 0, lo_open=True)
        _number(cfg, "plate.E_c_I_c", 0, lo_open=True)
        _number(cfg, "plate.nu", 0, 0.5, hi_open=True)
        _number(cfg, "plate.damping", 0)
        for key in ("zp1", "Lp1", "Lp2"):
            _number(cfg, f"patches.{key}", 0, lo_open=True)
        zp2 = cfg["patches"]["zp2"]
        if not isinstance(zp2, list) or len(zp2) != 2:
            raise ConfigError("patches.zp2: expected a list of two offsets")
        for key in ("PsiP", "a1", "a2", "rho_p_h_p", "Xi_p"):
            _number(cfg, f"piezo.{key}")
        _number(cfg, "piezo.sigma", 0, lo_open=True)
        for key in ("a", "b", "c", "d", "zb1"):
            _number(cfg, f"equilibrium.{key}")
    else:
        _number(cfg, "grid.n", 9, integer=True)
        _number(cfg, "grid.length", 0, lo_open=True)
        _number(cfg, "beam.rhoA", 0, lo_open=True)
        _number(cfg, "beam.EI", 0, lo_open=True)
        _number(cfg, "beam.damping", 0)
        act = cfg["beam"]["actuators"]
        if not isinstance(act, list) or len(act) != 2:
            raise ConfigError("beam.actuators: expected a list of two positions")
        for key in ("a", "b"):
            _number(cfg, f"equilibrium.{key}")
    for key in ("J34", "R33", "R34", "R44"):
        _number(cfg, f"controller.{key}")
    _matrix(cfg, "controller.Mc", (2, 2))
    _matrix(cfg, "controller.G34", (2, 2))
    c = _matrix(cfg, "controller.c", (2,))
    if np.any(c <= 0):
        raise ConfigError("controller.c: shaping gains must be positive")
    return cfg


def parse_config(path=None, scenario: str | None = None, overrides: dict | None = None) -> dict:
    """Load, merge with scenario defaults and validate a configuration.

    The scenario comes from the file, or from ``scenario`` when the file
    does not name one; a conflict between the two is an error.
    """
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8") or "{}")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("top level: expected a JSON object")
    name = raw.get("scenario", scenario)
    if scenario is not None and name != scenario:
        raise ConfigError(f"scenario: file names {name!r} but {scenario!r} was requested")
    if name is None:
        raise ConfigError("scenario: not given")
    cfg = _merge(default_config(name), raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)


def build_plant(cfg: dict) -> PlatePlant | BeamPlant:
    g = cfg["grid"]
    if "plate" in cfg:
        pc, pa, pz = cfg["plate"], cfg["patches"], cfg["piezo"]
        return PlatePlant(
            grid=Grid2D(int(g["n1"]), int(g["n2"]), g["L1"], g["L2"]),
            rho_c_h_c=pc["rho_c_h_c"], E_c_I_c=pc["E_c_I_c"], nu=pc["nu"], damping=pc["damping"],
            geometry=PatchGeometry(pa["zp1"], tuple(pa["zp2"]), pa["Lp1"], pa["Lp2"]),
            piezo=PiezoParams(**pz),
        )
    b = cfg["beam"]
    return BeamPlant(
        grid=Grid1D(int(g["n"]), g["length"]),
        rhoA=b["rhoA"], EI=b["EI"], actuators=tuple(b["actuators"]), damping=b["damping"],
    )


def build_gains(cfg: dict) -> Gains:
    return Gains(**cfg["controller"])


def build_equilibrium(cfg: dict) -> DesiredEquilibrium:
    return DesiredEquilibrium(**cfg["equilibrium"])
