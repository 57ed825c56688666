import json
import subprocess
import sys

import pytest

from fhe_alloc.cli import main
from fhe_alloc.sweep import read_csv


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "scn.json"
    assert main(["generate", "--seed", "1", "--out", str(path), "--set", "n_devices=2"]) == 0
    return path


def test_generate_and_solve(tmp_path, scenario_file, capsys):
    out = tmp_path / "res.json"
    assert main(["solve", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["feasible"] and res["converged"]
    assert len(res["allocation"]["lam"]) == 2
    assert res["objective_trace"][-1] == pytest.approx(res["objective"])
    assert "objective" in capsys.readouterr().out


def test_solver_flags(scenario_file, tmp_path):
    out = tmp_path / "res.json"
    assert main(["solve", "--scenario", str(scenario_file), "--out", str(out),
                 "--max-outer", "1", "--no-rebalance"]) == 0
    assert json.loads(out.read_text())["iterations"] == 1


def test_infeasible_exit_code(tmp_path, capsys):
    path = tmp_path / "tight.json"
    assert main(["generate", "--out", str(path), "--set", "f_total_hz=1e9"]) == 0
    assert main(["solve", "--scenario", str(path)]) == 2
    assert "infeasible [server_capacity]" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["generate", "--out", "x.json", "--set", "bogus=1"],
    ["generate", "--out", "x.json", "--set", "n_devices=0"],
    ["solve", "--scenario", "does-not-exist.json"],
    ["solve", "--scenario", "SCN", "--eps", "2"],
    ["sweep", "--scenario", "SCN", "--preset", "nope", "--out-dir", "OUT"],
])
def test_config_exit_code(argv, scenario_file, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    argv = [str(scenario_file) if a == "SCN" else str(tmp_path / "o") if a == "OUT" else a for a in argv]
    assert main(argv) == 3


def test_sweep_config_and_plot(tmp_path, scenario_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"parameter": "omega", "values": [0, 5], "allocators": ["proposed"],
                               "name": "w"}))
    out = tmp_path / "out"
    assert main(["sweep", "--scenario", str(scenario_file), "--config", str(cfg),
                 "--out-dir", str(out), "--plot"]) == 0
    rows = read_csv(out / "sweep_w.csv")
    assert [r.value for r in rows] == [0.0, 5.0]
    assert (out / "w_energy_total.svg").exists() and (out / "w_lambda.svg").exists()
    assert main(["plot", str(out / "sweep_w.csv"), "--out-dir", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "w_objective.svg").exists()


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fhe_alloc.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "generate" in proc.stdout
