import json

import numpy as np
import pytest
from typer.testing import CliRunner

from src.cli import app
from src.io_ops import read_report, read_series, read_snapshot

runner = CliRunner()


def _write(tmp_path, name, config):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(config))
    return str(path)


@pytest.fixture
def heat_config(tmp_path):
    return _write(tmp_path, "heat", {
        "scenario": "heat",
        "grid": {"complex_dim": 1, "points": 16},
        "bundle": {"rank": 1, "start": {"kind": "log_entries", "entries": [["0.05*cos(2*pi*x0)"]]}},
        "flow": {"dt": 1e-3, "max_steps": 3000, "record_functional": False, "progress": False},
        "verify": {"flow_steps": 10, "random_forms": 2},
        "output": {"record_every": 50},
    })


@pytest.fixture
def split_config(tmp_path):
    return _write(tmp_path, "split", {
        "scenario": "split",
        "grid": {"complex_dim": 1, "points": 8},
        "bundle": {"rank": 2, "twist": [[1], [-1]]},
        "flow": {"dt": 1e-3, "max_steps": 5000, "renormalize_det": True, "record_functional": False,
                 "progress": False},
        "stability": {"snapshot_every": 200, "samples": 4},
        "output": {"record_every": 100},
    })


def test_run_writes_all_artifacts(tmp_path, heat_config):
    out = tmp_path / "runs"
    result = runner.invoke(app, ["run", "--config", heat_config, "--out-dir", str(out)])
    assert result.exit_code == 0, result.output
    assert "heat: converged" in result.output

    run_dir = out / "heat"
    for name in ("series.csv", "state.bin", "state.json", "config.json", "report.json"):
        assert (run_dir / name).exists()
    report = read_report(run_dir / "report.json")
    assert report["verdict"] == "converged"
    assert report["final_Y"] <= 1e-10
    series = read_series(run_dir / "series.csv")
    assert series["t"][-1] == pytest.approx(report["t_final"])
    state, meta = read_snapshot(run_dir / "state.json")
    assert state.step == report["steps"]
    assert meta["dt"] == 1e-3


def test_report_and_resume(tmp_path, heat_config):
    out = tmp_path / "runs"
    assert runner.invoke(app, ["run", "-c", heat_config, "-o", str(out)]).exit_code == 0
    rows_before = len(read_series(out / "heat" / "series.csv")["t"])

    result = runner.invoke(app, ["report", str(out / "heat")])
    assert result.exit_code == 0, result.output
    assert "heat: converged" in result.output

    result = runner.invoke(app, ["resume", str(out / "heat"), "--steps", "5"])
    assert result.exit_code == 0, result.output
    assert "Resumed heat" in result.output
    assert len(read_series(out / "heat" / "series.csv")["t"]) == rows_before


def test_split_bundle_is_destabilized(tmp_path, split_config):
    out = tmp_path / "runs"
    result = runner.invoke(app, ["run", "-c", split_config, "-o", str(out)])
    assert result.exit_code == 0, result.output
    report = read_report(out / "split" / "report.json")
    assert report["verdict"] == "diverged+destabilized"
    stability = report["stability"]
    assert stability["sigma"] == 0.5
    assert stability["rank"] == 1
    assert stability["mu_sub"] == pytest.approx(3.141592653589793, rel=1e-6)
    assert stability["destabilizing"]
    assert all(check["lhs"] <= check["rhs"] for check in stability["sigma_inequality"])


def test_verify_passes_on_line_bundle(heat_config):
    result = runner.invoke(app, ["verify", "-c", heat_config])
    assert result.exit_code == 0, result.output
    assert "checks as expected" in result.output


def test_invalid_config_exits_nonzero(tmp_path):
    bad = _write(tmp_path, "bad", {"scenario": "bad", "grid": {"points": 7}})
    result = runner.invoke(app, ["run", "-c", bad, "-o", str(tmp_path)])
    assert result.exit_code == 1
    assert "grid.points" in result.output


def test_presets_are_listed():
    result = runner.invoke(app, ["presets"])
    assert result.exit_code == 0
    assert "split_unstable" in result.output


def _short_heat(tmp_path, name, steps, **output):
    return _write(tmp_path, name, {
        "scenario": name,
        "grid": {"complex_dim": 1, "points": 16},
        "bundle": {"rank": 1, "start": {"kind": "log_entries", "entries": [["0.05*cos(2*pi*x0)"]]}},
        "flow": {"dt": 1e-3, "max_steps": steps, "record_functional": False, "progress": False},
        "output": {"record_every": 1, **output},
    })


def test_resume_matches_uninterrupted_run(tmp_path):
    out = tmp_path / "runs"
    whole = _short_heat(tmp_path, "whole", 40)
    split = _short_heat(tmp_path, "split", 20)
    assert runner.invoke(app, ["run", "-c", whole, "-o", str(out)]).exit_code == 0
    assert runner.invoke(app, ["run", "-c", split, "-o", str(out)]).exit_code == 0
    result = runner.invoke(app, ["resume", str(out / "split"), "--steps", "20"])
    assert result.exit_code == 0, result.output

    reference, _ = read_snapshot(out / "whole" / "state.json")
    resumed, _ = read_snapshot(out / "split" / "state.json")
    assert resumed.step == reference.step == 40
    assert np.max(np.abs(resumed.H - reference.H)) <= 1e-12
    series = read_series(out / "split" / "series.csv")
    assert len(series["t"]) == 41
    assert np.allclose(series["Y"], read_series(out / "whole" / "series.csv")["Y"], rtol=1e-12, atol=0.0)


def test_output_section_sets_directory_and_snapshot(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = _short_heat(tmp_path, "nosnap", 5, dir="custom_runs", snapshot=False)
    result = runner.invoke(app, ["run", "-c", config])
    assert result.exit_code == 0, result.output
    run_dir = tmp_path / "custom_runs" / "nosnap"
    assert (run_dir / "report.json").exists()
    assert not (run_dir / "state.bin").exists()
    assert "snapshot" not in read_report(run_dir / "report.json")["paths"]

    result = runner.invoke(app, ["resume", str(run_dir), "--steps", "5"])
    assert result.exit_code == 1
    assert "not found" in result.output


def test_nilpotent_preset_finds_the_kernel_line(tmp_path):
    out = tmp_path / "runs"
    result = runner.invoke(app, ["run", "-c", "nilpotent_higgs", "-o", str(out)])
    assert result.exit_code == 0, result.output
    report = read_report(out / "nilpotent_higgs" / "report.json")
    assert report["verdict"] == "diverged+destabilized"
    stability = report["stability"]
    assert stability["sigma"] == 1.0
    assert stability["rank"] == 1
    assert stability["residuals"]["higgs_invariance"] <= 1e-3
    assert stability["mu_sub"] == pytest.approx(0.0, abs=1e-9)
    assert [record["sigma"] for record in stability["per_sigma"]] == [0.5, 1.0]
