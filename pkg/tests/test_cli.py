import csv
import json

import pytest

from kinkopt.cli import EXIT_INVALID, EXIT_OK, EXIT_SOLVER, EXIT_UNKNOWN, main, observed_orders, run
from kinkopt.scenarios import SCENARIO_NAMES, get_scenario


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_scenarios_are_copies():
    a = get_scenario("tracking-ocp")
    a["problem"]["nu"] = 99
    assert get_scenario("tracking-ocp")["problem"]["nu"] == 0.01
    with pytest.raises(KeyError):
        get_scenario("nope")
    assert "radial-geometry" in SCENARIO_NAMES


def test_solve_state_writes_outputs(tmp_path):
    out = tmp_path / "state"
    assert main(["solve-state", "--config", "smooth-manufactured", "--out", str(out), "--levels", "2"]) == EXIT_OK
    data = json.loads((out / "state.json").read_text())
    assert data["converged"]
    assert data["l2_error"] < 1e-2
    assert "vertices" in json.loads((out / "mesh.json").read_text())


def test_config_file_and_missing_fields(tmp_path, caplog):
    cfg = get_scenario("kinked-manufactured")
    del cfg["problem"]["a0"]
    del cfg["mesh"]["target_h"]
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert run("solve-state", str(path), str(tmp_path / "o")) == EXIT_INVALID
    assert "problem.a0" in caplog.text and "mesh.target_h" in caplog.text
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("patch, field", [
    ({"a0": "0.5-*y"}, "problem.a0"),
    ({"nu": 0.0}, "problem.nu"),
    ({"alpha": 2.0}, "problem.alpha"),
])
def test_invalid_values(tmp_path, caplog, patch, field):
    cfg = get_scenario("kinked-manufactured")
    cfg["problem"].update(patch)
    assert run("solve-state", cfg, str(tmp_path)) == EXIT_INVALID
    assert field in caplog.text


def test_unknown_command_and_config(tmp_path):
    assert run("frobnicate", "smooth-manufactured", str(tmp_path)) == EXIT_UNKNOWN
    assert run("convergence-study", "smooth-manufactured", str(tmp_path)) == EXIT_UNKNOWN
    assert run("solve-state", "no-such-scenario", str(tmp_path)) == EXIT_INVALID


def test_solver_failure_exit_code(tmp_path):
    cfg = get_scenario("tracking-ocp")
    cfg["params"]["max_iter"] = 1
    assert run("solve-ocp", cfg, str(tmp_path), levels=1) == EXIT_SOLVER


def test_convergence_study(tmp_path):
    out = tmp_path / "study"
    code = main(["convergence-study", "solve-state", "--config", "smooth-manufactured", "--out", str(out),
                 "--levels", "3"])
    assert code == EXIT_OK
    rows = _read_csv(out / "study.csv")
    assert len(rows) == 3
    assert float(rows[-1]["order_l2_error"]) > 1.8
    summary = json.loads((out / "study.json").read_text())
    assert summary["metric"] == "l2_error"


@pytest.mark.parametrize("command, scenario, expected", [
    ("extract-levelset", "radial-geometry", "levelset.json"),
    ("verify-green", "cusp-green", "green.csv"),
    ("jump-functional", "strip-geometry", "jump.csv"),
    ("an-limits", "strip-geometry", "an.csv"),
    ("curvature", "radial-geometry", "curvature.json"),
    ("solve-ocp", "kinked-manufactured", "ocp.json"),
    ("check-soc", "kinked-manufactured", "soc.csv"),
])
def test_commands_on_scenarios(tmp_path, command, scenario, expected):
    assert run(command, scenario, str(tmp_path), levels=2) == EXIT_OK
    assert (tmp_path / expected).exists()


def test_tracking_curvature_report(tmp_path):
    assert run("curvature", "tracking-ocp", str(tmp_path), levels=1) == EXIT_OK
    rep = json.loads((tmp_path / "curvature.json").read_text())
    assert abs(rep["q2_estimate"]) <= 1.1 * rep["sigma_bound"]
    assert rep["total"] == pytest.approx(rep["q_s"] + rep["q_1"] + rep["q_2"])


def test_observed_orders():
    orders = observed_orders([1.0, 0.5, 0.25], [1.0, 0.25, 0.0625], True)
    assert orders[1:] == pytest.approx([2.0, 2.0])
    conv = observed_orders([1.0, 0.5, 0.25, 0.125], [2.0, 1.0, 0.5, 0.25], False)
    assert conv[-1] == pytest.approx(1.0)
