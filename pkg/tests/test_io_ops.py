import numpy as np
import pytest

from src.bundle import BundleMetricState
from src.flow import COLUMNS
from src.io_ops import read_report, read_series, read_snapshot, write_report, write_series, write_snapshot
from src.lattice import random_hermitian_field
from src.matfuncs import herm_exp, identity_field


def test_series_keeps_full_precision(tmp_path):
    rows = [{name: np.pi * (i + 1) + j / 3.0 for j, name in enumerate(COLUMNS)} for i in range(3)]
    rows[0]["deg"] = 1.0
    path = write_series(rows, tmp_path / "out" / "series.csv")
    assert path.read_text().splitlines()[0] == ",".join(COLUMNS)
    series = read_series(path)
    assert series["Y"][2] == rows[2]["Y"]
    assert "deg" not in series


def test_series_with_missing_columns_is_rejected(tmp_path):
    path = tmp_path / "series.csv"
    path.write_text("t,Y\n0,1\n")
    with pytest.raises(ValueError, match="lacks columns"):
        read_series(path)
    with pytest.raises(ValueError, match="not found"):
        read_series(tmp_path / "missing.csv")


def test_snapshot_restores_state_exactly(tmp_path, line_grid, rng):
    H = herm_exp(random_hermitian_field(line_grid, rng, 2, amplitude=0.3))
    state = BundleMetricState(H=H, H0=identity_field(line_grid.shape, 2), t=0.25, step=40)
    binary, sidecar = write_snapshot(state, tmp_path / "state", dt=1e-3, extra={"mu": 0.0})
    assert binary.suffix == ".bin"
    assert binary.stat().st_size == 2 * H.size * 16

    restored, meta = read_snapshot(sidecar)
    assert np.array_equal(restored.H, state.H)
    assert np.array_equal(restored.H0, state.H0)
    assert (restored.t, restored.step) == (0.25, 40)
    assert meta["dt"] == 1e-3
    assert meta["mu"] == 0.0
    assert meta["fields"] == ["H", "H0"]


def test_truncated_snapshot_is_rejected(tmp_path, line_grid):
    state = BundleMetricState.identity(line_grid, 1)
    binary, _ = write_snapshot(state, tmp_path / "state")
    binary.write_bytes(binary.read_bytes()[:-16])
    with pytest.raises(ValueError, match="expected"):
        read_snapshot(binary)


def test_report_serializes_numpy_values(tmp_path):
    path = write_report({"Y": np.float64(0.5), "eig": np.arange(3), "dir": tmp_path}, tmp_path / "report.json")
    report = read_report(path)
    assert report == {"Y": 0.5, "eig": [0, 1, 2], "dir": str(tmp_path)}
