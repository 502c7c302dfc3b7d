"""Tests for the command line interface: subcommands, artifacts, exit codes."""

import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

import ctmflow.cli as cli
from ctmflow.cli import (
    EXIT_INFEASIBLE,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_TIGHTNESS,
    EXIT_VALIDATION,
    main,
)
from ctmflow.lpformat import parse_lp_text

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
TWO_BRANCH = SCENARIOS / "two_branch" / "scenario.json"
TWO_BRANCH_HEURISTIC = SCENARIOS / "two_branch" / "scenario_heuristic.json"
CORRIDOR_ROADS = SCENARIOS / "corridor" / "roads.csv"
CORRIDOR_SENSORS = SCENARIOS / "corridor" / "sensors.csv"


def _cost_from_summary(path, run):
    with open(path, newline="") as fh:
        rows = {r["run"]: r for r in csv.DictReader(fh)}
    return float(rows[run]["cost"]), rows


def test_exit_code_values():
    # the contract other tooling scripts against
    assert (EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_INFEASIBLE,
            EXIT_TIGHTNESS) == (0, 2, 3, 4, 5)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def test_simulate_writes_artifacts(tmp_path, capsys):
    code = main(["simulate", str(TWO_BRANCH), "--out", str(tmp_path)])
    assert code == EXIT_OK
    for name in ("trajectory.csv", "flows.csv", "totals.csv", "summary.csv"):
        assert (tmp_path / name).is_file()
    out = capsys.readouterr().out
    assert "scenario: two-branch (400 steps x 5 s, 10 cells, 2 commodities)" in out
    cost_line = [l for l in out.splitlines() if l.startswith("cost (ttt):")][0]
    assert float(cost_line.split(":")[1]) == pytest.approx(44452.340813, rel=1e-9)


def test_simulate_with_control_reports_both_runs(tmp_path, capsys):
    code = main(["simulate", str(TWO_BRANCH_HEURISTIC), "--out", str(tmp_path)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "uncontrolled:" in out and "controlled:" in out
    with open(tmp_path / "summary.csv", newline="") as fh:
        header = fh.readline().strip().split(",")
    assert header == ["category", "uncontrolled", "controlled"]
    cost_line = [l for l in out.splitlines() if l.startswith("cost (ttt):")][0]
    # the fixed ramp-metering plan beats no control by about 7%
    assert float(cost_line.split(":")[1]) == pytest.approx(41376.022298, rel=1e-9)


def test_simulate_missing_file_exits_2(tmp_path, capsys):
    code = main(["simulate", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION
    assert "error:" in capsys.readouterr().err
    assert not (tmp_path / "trajectory.csv").exists()  # nothing written


def test_simulate_unstable_step_exits_2(tmp_path, capsys):
    spec = json.loads(TWO_BRANCH.read_text())
    spec["step_hours"] = 0.5  # far above the stability bound
    shutil.copy(SCENARIOS / "two_branch" / "network.json", tmp_path / "network.json")
    bad = tmp_path / "scenario.json"
    bad.write_text(json.dumps(spec))
    code = main(["simulate", str(bad), "--out", str(tmp_path / "out")])
    assert code == EXIT_VALIDATION
    assert "stability bound" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def test_optimize_two_branch_passes_and_exports_lp(tmp_path, capsys):
    code = main(["optimize", str(TWO_BRANCH), "--out", str(tmp_path),
                 "--export-lp"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    obj_line = [l for l in out.splitlines() if l.startswith("objective:")][0]
    assert float(obj_line.split(":")[1]) == pytest.approx(28805.116313, rel=1e-6)
    assert "tightness: PASS" in (tmp_path / "tightness.txt").read_text()
    for name in ("solution.csv", "control.csv", "totals_optimal.csv",
                 "totals_uncontrolled.csv", "summary.csv"):
        assert (tmp_path / name).is_file()
    # the exported problem re-parses to the declared size
    model = parse_lp_text((tmp_path / "problem.lp").read_text())
    assert len(model.variables) == 16020  # 10 cells x 2 commodities x (401+400)
    # recovered metering holds some commodity below free discharge
    with open(tmp_path / "control.csv", newline="") as fh:
        alphas = [float(r["alpha"]) for r in csv.DictReader(fh)]
    assert min(alphas) < 0.9 and max(alphas) <= 1.0


def test_optimize_rejects_bad_tol(tmp_path, capsys):
    code = main(["optimize", str(TWO_BRANCH), "--out", str(tmp_path),
                 "--tol", "0"])
    assert code == EXIT_VALIDATION
    assert "--tol must be positive" in capsys.readouterr().err


def test_optimize_above_jam_exits_4(tmp_path, capsys):
    spec = json.loads(TWO_BRANCH.read_text())
    spec["horizon_steps"] = 10
    # cell '6' jams at weighted volume 0.125 and weighs cars at 0.0028 each,
    # so 100 vehicles (weighted 0.28) can never drain through the dynamics
    spec["initial_state"] = [{"cell": "6", "commodity": "car", "volume": 100.0}]
    shutil.copy(SCENARIOS / "two_branch" / "network.json", tmp_path / "network.json")
    bad = tmp_path / "scenario.json"
    bad.write_text(json.dumps(spec))
    code = main(["optimize", str(bad), "--out", str(tmp_path / "out")])
    assert code == EXIT_INFEASIBLE
    err = capsys.readouterr().err
    assert "relaxation infeasible" in err and "above jam" in err


def test_optimize_exit_5_when_verification_tolerance_unreachable(
        tmp_path, capsys, monkeypatch):
    # solver noise is ~1e-9 on this problem, so a 1e-15 exactness demand must
    # fail verification while the solve itself still succeeds
    monkeypatch.setattr(cli, "DEFAULT_TIGHTNESS_TOL", 1e-15)
    code = main(["optimize", str(TWO_BRANCH), "--out", str(tmp_path)])
    assert code == EXIT_TIGHTNESS
    assert "tightness: FAIL" in (tmp_path / "tightness.txt").read_text()
    out = capsys.readouterr().out
    assert "tightness: FAIL (tolerance 1e-15)" in out


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def test_compare_ranks_all_four_runs(tmp_path, capsys):
    code = main(["compare", str(TWO_BRANCH), "--out", str(tmp_path)])
    assert code == EXIT_OK
    cost_opt, rows = _cost_from_summary(tmp_path / "summary.csv", "optimal")
    assert set(rows) == {"uncontrolled", "optimal", "partial-car",
                         "single-commodity"}
    assert cost_opt == pytest.approx(28805.116313, rel=1e-6)
    assert float(rows["uncontrolled"]["cost"]) == pytest.approx(44452.340813,
                                                                rel=1e-9)
    costs = [float(r["cost"]) for r in rows.values()]
    assert costs == sorted(costs)  # summary rows come ranked by cost
    assert list(rows)[0] == "optimal"  # nothing beats the relaxed optimum
    for run in rows:
        fname = "totals_" + run.replace("-", "_") + ".csv"
        assert (tmp_path / fname).is_file()
    out = capsys.readouterr().out
    assert "ranked by cost (ttt):" in out
    assert "controlled in partial run: car" in out


def test_compare_control_only_selects_commodities(tmp_path, capsys):
    code = main(["compare", str(TWO_BRANCH), "--out", str(tmp_path),
                 "--control-only", "truck"])
    assert code == EXIT_OK
    _, rows = _cost_from_summary(tmp_path / "summary.csv", "optimal")
    assert "partial-truck" in rows
    assert "controlled in partial run: truck" in capsys.readouterr().out


def test_compare_unknown_commodity_exits_2(tmp_path, capsys):
    code = main(["compare", str(TWO_BRANCH), "--out", str(tmp_path),
                 "--control-only", "bus"])
    assert code == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert "unknown commodity in --control-only: 'bus'" in err
    assert "scenario has: car, truck" in err


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def test_calibrate_corridor_then_simulate(tmp_path, capsys):
    code = main(["calibrate", str(CORRIDOR_ROADS), str(CORRIDOR_SENSORS),
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    meta = json.loads((tmp_path / "calibration.json").read_text())
    assert meta["n_cells"] == 153
    assert meta["commodities"] == ["car", "truck"]
    assert meta["recommended_h_hours"] == pytest.approx(0.02)
    assert meta["recommended_h_seconds"] == pytest.approx(72.0)
    assert meta["horizon_steps"] == 200  # 4 h sensor window / 0.02 h steps
    assert meta["split_p"] == 0.96
    assert meta["warnings"] == []
    out = capsys.readouterr().out
    assert "roads: 20  cells: 153  commodities: car, truck" in out
    # the emitted scenario is immediately runnable
    code = main(["simulate", str(tmp_path / "scenario.json"),
                 "--out", str(tmp_path / "sim")])
    assert code == EXIT_OK
    assert (tmp_path / "sim" / "trajectory.csv").is_file()


def test_calibrate_rejects_bad_split(tmp_path, capsys):
    code = main(["calibrate", str(CORRIDOR_ROADS), str(CORRIDOR_SENSORS),
                 "--out", str(tmp_path), "--split-p", "1.5"])
    assert code == EXIT_VALIDATION
    assert "--split-p must be in [0, 1]" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# packaging
# ---------------------------------------------------------------------------


def test_module_entry_point_runs(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "ctmflow", "simulate", str(TWO_BRANCH),
         "--out", str(tmp_path)],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "cost (ttt):" in proc.stdout
    assert (tmp_path / "summary.csv").is_file()
