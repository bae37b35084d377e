"""Persistence of diagnostics series, metric snapshots and run reports."""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np

from .bundle import BundleMetricState
from .flow import COLUMNS
from .utils import PathLike, ensure_dir, require_file

SNAPSHOT_DTYPE = "<c16"


def write_series(rows: Iterable[Dict[str, float]], path: PathLike) -> Path:
    """Write diagnostics rows as CSV with a fixed header and round-trip precision."""
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([format(float(row[name]), ".17g") for name in COLUMNS])
    return path


def read_series(path: PathLike) -> Dict[str, np.ndarray]:
    """Read a series CSV back into one float array per column."""
    require_file(path, "series")
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        missing = [name for name in COLUMNS if name not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"Series file {path} lacks columns: {', '.join(missing)}")
        rows = list(reader)
    return {name: np.array([float(row[name]) for row in rows]) for name in COLUMNS}


def write_snapshot(
    state: BundleMetricState,
    path: PathLike,
    dt: Optional[float] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Tuple[Path, Path]:
    """Write H and H0 as little-endian complex doubles plus a JSON sidecar."""
    path = Path(path)
    ensure_dir(path.parent)
    binary = path.with_suffix(".bin")
    sidecar = path.with_suffix(".json")

    payload = np.concatenate([state.H.ravel(), state.H0.ravel()]).astype(SNAPSHOT_DTYPE)
    payload.tofile(binary)
    meta = {
        "dtype": SNAPSHOT_DTYPE,
        "fields": ["H", "H0"],
        "shape": list(state.H.shape),
        "t": float(state.t),
        "step": int(state.step),
        "dt": dt,
    }
    if extra:
        meta.update(extra)
    with open(sidecar, "w") as f:
        json.dump(meta, f, indent=2)
    return binary, sidecar


def read_snapshot(path: PathLike) -> Tuple[BundleMetricState, Dict[str, Any]]:
    """Read a snapshot written by write_snapshot; ``path`` may name either file."""
    path = Path(path)
    binary = path.with_suffix(".bin")
    sidecar = path.with_suffix(".json")
    require_file(binary, "snapshot")
    require_file(sidecar, "snapshot sidecar")

    with open(sidecar, "r") as f:
        meta = json.load(f)
    shape = tuple(meta["shape"])
    data = np.fromfile(binary, dtype=meta.get("dtype", SNAPSHOT_DTYPE))
    size = int(np.prod(shape))
    if data.size != 2 * size:
        raise ValueError(f"Snapshot {binary} holds {data.size} values, expected {2 * size}")
    H = data[:size].reshape(shape).astype(complex)
    H0 = data[size:].reshape(shape).astype(complex)
    state = BundleMetricState(H=H, H0=H0, t=float(meta["t"]), step=int(meta["step"]))
    return state, meta


def write_report(report: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w") as f:
        json.dump(report, f, indent=2, default=_jsonable)
    return path


def read_report(path: PathLike) -> Dict[str, Any]:
    require_file(path, "report")
    with open(path, "r") as f:
        return json.load(f)


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
