import json

import numpy as np
import pytest

from uavee import cli


def _config(tmp_path, **constraints):
    cfg = json.loads(cli.bundled_config("table1"))
    cfg["constraints"] = {"T": 20.0, **constraints}
    cfg["solver"]["dt"] = 1.0
    cfg["solver"]["max_iters"] = 6
    path = tmp_path / "small.json"
    path.write_text(json.dumps(cfg))
    return path


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert cli.main(["analyze", "--config", str(missing)]) == cli.EXIT_INPUT
    assert str(missing) in capsys.readouterr().err


def test_bad_field_is_input_error(tmp_path, capsys):
    cfg = json.loads(cli.bundled_config("table1"))
    cfg["aircraft"]["c1"] = -1.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["analyze", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_INPUT
    assert "c1" in capsys.readouterr().err


def test_analyze_circular(tmp_path, capsys):
    path = _config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["analyze", "--config", str(path), "--design", "circular", "--out", str(out)]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "radius" in text
    payload = json.loads((out / "circular_metrics.json").read_text())
    assert payload["radius_m"] == pytest.approx(158.0, abs=1.0)
    traj = cli.read_trajectory_csv(out / "circular_trajectory.csv")
    assert traj.N == 19


def test_analyze_hover_notes_divergence(tmp_path, capsys):
    path = _config(tmp_path)
    assert cli.main(["analyze", "--config", str(path), "--design", "hover", "--out", str(tmp_path)]) == cli.EXIT_OK
    assert "unbounded" in capsys.readouterr().out
    payload = json.loads((tmp_path / "hover_metrics.json").read_text())
    assert payload["closed_form"]["avg_power"] is None


def test_optimize_writes_consistent_artifacts(tmp_path):
    path = _config(tmp_path)
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        log = tmp_path / f"iters{k}.csv"
        assert cli.main(["optimize", "--config", str(path), "--out", str(out), "--log", str(log)]) == cli.EXIT_OK
        runs.append((out, log))
    (out0, log0), (out1, _) = runs
    traj = cli.read_trajectory_csv(out0 / "trajectory.csv")
    assert traj.N == 19
    assert (out0 / "trajectory.csv").read_bytes() == (out1 / "trajectory.csv").read_bytes()
    header = log0.read_text().splitlines()[0].split(",")
    assert header == list(cli.ITERATION_COLUMNS)
    rows = np.genfromtxt(log0, delimiter=",", names=True)
    assert np.all(np.diff(np.atleast_1d(rows["ee_lb"])) >= -1e-6)
    metrics = json.loads((out0 / "metrics.json").read_text())
    assert metrics["mode"] == "ee" and metrics["metrics"]["energy_efficiency"] > 0


def test_output_directory_from_environment(tmp_path, monkeypatch):
    path = _config(tmp_path)
    target = tmp_path / "env-out"
    monkeypatch.setenv(cli.OUT_ENV, str(target))
    assert cli.main(["analyze", "--config", str(path), "--design", "straight", "--dt", "0.1"]) == cli.EXIT_OK
    assert (target / "straight_trajectory.csv").is_file()
    payload = json.loads((target / "straight_metrics.json").read_text())
    assert payload["quadrature_bits"] == pytest.approx(payload["closed_form_bits"], rel=1e-4)


def test_unreachable_boundaries_are_input_errors(tmp_path, capsys):
    path = _config(tmp_path, q0=[0.0, 0.0], qF=[5000.0, 0.0], Vmax=50.0)
    assert cli.main(["optimize", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_INPUT
    assert "error" in capsys.readouterr().err


def test_tampered_trajectory_is_refused(tmp_path):
    path = _config(tmp_path)
    cli.main(["analyze", "--config", str(path), "--design", "circular", "--out", str(tmp_path)])
    csv = tmp_path / "circular_trajectory.csv"
    lines = csv.read_text().splitlines()
    cells = lines[3].split(",")
    cells[2] = str(float(cells[2]) + 5.0)
    lines[3] = ",".join(cells)
    csv.write_text("\n".join(lines) + "\n")
    with pytest.raises(Exception):
        cli.read_trajectory_csv(csv)
