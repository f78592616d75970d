import csv
import json

import numpy as np
import pytest

from casimir_ph.cli import TRAJECTORY_HEADER, run
from casimir_ph.config import ConfigError, SCHEMA, default_config, parse_config


def write_config(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# --- configuration ----------------------------------------------------------------

def test_empty_config_echoes_defaults(tmp_path):
    cfg = parse_config(write_config(tmp_path / "c.json", {}), "plate-casimir")
    assert cfg["schema"] == SCHEMA
    assert cfg["plate"] == {"rho_c_h_c": 1.0, "E_c_I_c": 1.0, "nu": 0.2, "damping": 0.0}
    assert cfg["patches"] == {"zp1": 0.25, "zp2": [0.1, 0.65], "Lp1": 0.25, "Lp2": 0.25}
    assert cfg["grid"]["n1"] == cfg["grid"]["n2"] == 21
    ctrl = cfg["controller"]
    assert (ctrl["J34"], ctrl["R33"], ctrl["R34"], ctrl["R44"]) == (1.0, 200.0, -1.0, 150.0)
    assert ctrl["Mc"] == [[1e4, 0.0], [0.0, 1e4]]
    assert ctrl["G34"] == [[100.0, 0.0], [100.0, 0.0]]
    assert ctrl["c"] == [0.1, 0.1]
    assert cfg["equilibrium"] == {"a": 0.16, "b": 0.12, "c": 1.0, "d": 2.0, "zb1": 0.5}
    assert cfg["simulation"]["t_final"] == 50.0


def test_round_trip_of_defaults(tmp_path):
    cfg = default_config("beam-casimir")
    assert parse_config(write_config(tmp_path / "c.json", cfg)) == cfg


def test_poisson_ratio_range(tmp_path):
    with pytest.raises(ConfigError, match="plate.nu"):
        parse_config(write_config(tmp_path / "c.json", {"plate": {"nu": 0.7}}), "plate-casimir")


def test_unknown_key_named(tmp_path):
    with pytest.raises(ConfigError, match="foo"):
        parse_config(write_config(tmp_path / "c.json", {"foo": 1}), "beam-casimir")
    with pytest.raises(ConfigError, match="beam.foo"):
        parse_config(write_config(tmp_path / "c.json", {"beam": {"foo": 1}}), "beam-casimir")


def test_unparseable_config(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_config(bad, "beam-casimir")


def test_scenario_conflict(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write_config(tmp_path / "c.json", {"scenario": "beam-casimir"}), "plate-casimir")


# --- run ----------------------------------------------------------------------------

def test_simulate_beam_casimir(tmp_path):
    out = tmp_path / "b1"
    code = run(["simulate", "--scenario", "beam-casimir", "--t-final", "50", "--dt", "auto", "--out", str(out)])
    assert code == 0
    rows = read_rows(out / "trajectory.csv")
    assert rows[0] == TRAJECTORY_HEADER
    report = json.loads((out / "report.json").read_text())
    assert all(c["passed"] for c in report["checks"])
    assert set(report["files"]) == {"trajectory.csv", "w_final.csv", "edge_trace.csv"}
    for name in report["files"]:
        assert (out / name).exists()
    w = np.loadtxt(out / "w_final.csv", delimiter=",")
    assert w.shape == (21,)
    assert len(read_rows(out / "edge_trace.csv")) == len(rows) - 1


def test_verify_plate_casimir(tmp_path):
    out = tmp_path / "v"
    assert run(["verify", "--scenario", "plate-casimir", "--check", "casimir", "--out", str(out)]) == 0
    rows = read_rows(out / "residuals.csv")
    assert rows[0] == ["check", "condition", "norm", "tolerance", "pass", "detail"]
    assert all(r[4] == "pass" for r in rows[1:])
    assert {r[1] for r in rows[1:]} >= {"a", "b", "c", "d", "rank"}


def test_simulate_blowup_exit_code(tmp_path):
    from casimir_ph.plants import BeamPlant
    from casimir_ph.simulation import stability_dt

    dt = 10 * stability_dt(BeamPlant())
    code = run(["simulate", "--scenario", "beam-open-loop", "--dt", repr(dt), "--t-final", "2",
                "--out", str(tmp_path / "x")])
    assert code == 2


def test_config_error_exit_code(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"plate": {"nu": 0.7}})
    assert run(["simulate", "--scenario", "plate-casimir", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert run(["simulate", "--config", str(tmp_path / "missing.json")]) == 1


def test_verify_failure_exit_code(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"controller": {"R33": -1.0}})
    out = tmp_path / "v"
    assert run(["verify", "--scenario", "beam-casimir", "--config", str(cfg), "--check", "casimir",
                "--out", str(out)]) == 3
    rows = read_rows(out / "residuals.csv")
    assert rows[1][1] == "synthesis" and rows[1][4] == "fail"


@pytest.mark.parametrize("check", ["decomposition", "gradient", "power"])
def test_verify_numerical_checks(tmp_path, check):
    out = tmp_path / check
    assert run(["verify", "--scenario", "beam-open-loop", "--check", check, "--out", str(out)]) == 0
    rows = read_rows(out / "residuals.csv")
    assert len(rows) == 2 and rows[1][0] == check


def test_plate_outputs_and_determinism(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        code = run(["simulate", "--scenario", "plate-casimir", "--t-final", "2", "--log-every", "500",
                    "--out", str(out)])
        assert code == 0
    for name in ("trajectory.csv", "w_final.csv", "edge_trace.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    w = np.loadtxt(outs[0] / "w_final.csv", delimiter=",")
    assert w.shape == (21, 21)
    traj = read_rows(outs[0] / "trajectory.csv")
    edge = read_rows(outs[0] / "edge_trace.csv")
    assert len(edge) == len(traj) - 1
    assert all(len(r) == 22 for r in edge)
    assert b"\r" not in (outs[0] / "trajectory.csv").read_bytes()


def test_grid_override(tmp_path):
    out = tmp_path / "g"
    assert run(["simulate", "--scenario", "beam-open-loop", "--grid-n", "31", "--t-final", "0.01",
                "--out", str(out)]) == 0
    assert np.loadtxt(out / "w_final.csv", delimiter=",").shape == (31,)
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["grid"]["n"] == 31
