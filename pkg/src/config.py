"""Configuration management for higgsflow runs."""

import copy
import json
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .formulas import FormulaError, parse_formula

METRIC_KINDS = ("flat", "kaehler_perturbed", "nonkaehler", "entries")
INITIAL_METRIC_KINDS = ("identity", "log_entries", "random")
START_KINDS = ("none", "random", "log_entries")
SCHEMES = ("euler", "midpoint")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the dotted path of the field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def get_default_config() -> Dict[str, Any]:
    """Get default configuration for a run."""
    return {
        "scenario": "custom",
        "seed": 0,
        "grid": {
            "complex_dim": 1,
            "points": 32,
            "periods": None,
            "dealias": False,
        },
        "metric": {
            "kind": "flat",
            "amplitude": 0.0,
            "mode": None,
            "entries": None,
            "gauduchon_gauge": False,
        },
        "bundle": {
            "rank": 1,
            "twist": None,
            "theta": None,
            "holomorphy_tol": None,
            "initial_metric": {
                "kind": "identity",
                "entries": None,
                "amplitude": 0.1,
                "max_mode": 1,
                "det_gauge": True,
            },
            "start": {
                "kind": "none",
                "entries": None,
                "amplitude": 0.0,
                "max_mode": 1,
                "traceless": True,
            },
        },
        "flow": {
            "dt": None,
            "max_steps": 1000,
            "stop_Y": None,
            "renormalize_det": False,
            "functional_quadrature_nodes": 8,
            "scheme": "euler",
            "record_functional": True,
            "blowup_threshold": None,
            "max_halvings": 5,
            "sup_slack": 1e-6,
            "keep_snapshots": 8,
            "progress": True,
        },
        "stability": {
            "sigmas": [0.5, 0.2, 0.1, 0.05],
            "samples": 4,
            "snapshot_every": 0,
            "gap": 0.2,
            "threshold": 0.5,
            "residual_gate": 1e-2,
            "slope_tol": 1e-6,
        },
        "verify": {
            "random_forms": 5,
            "flow_steps": 20,
            "dt": 1e-4,
            "include_control": True,
        },
        "output": {
            "dir": "runs",
            "record_every": 1,
            "snapshot": True,
        },
    }


class _ConfigLoader(yaml.SafeLoader):
    """SafeLoader that also reads bare exponents such as ``1e-4`` as floats."""


_ConfigLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def load_config(config_path: Union[str, Path]) -> Dict[str, Any]:
    """Load configuration from a JSON file, or YAML for any other suffix."""
    try:
        with open(config_path, "r") as f:
            if Path(config_path).suffix.lower() == ".json":
                data = json.load(f)
            else:
                data = yaml.load(f, Loader=_ConfigLoader)
    except (OSError, ValueError, yaml.YAMLError) as e:
        raise ValueError(f"Failed to load config from {config_path}: {e}")
    if not isinstance(data, dict):
        raise ValueError(f"Failed to load config from {config_path}: top level is not a mapping")
    return data


def save_config(config: Dict[str, Any], config_path: Union[str, Path]) -> None:
    """Save configuration as JSON."""
    try:
        with open(config_path, "w") as f:
            json.dump(config, f, indent=2)
    except Exception as e:
        raise ValueError(f"Failed to save config to {config_path}: {e}")


def merge_config(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Deep-merge ``override`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(path, message)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_positive(value: Any, path: str, allow_none: bool = False) -> None:
    if value is None and allow_none:
        return
    _require(_is_number(value) and value > 0, path, "must be > 0")


def _check_formula_matrix(entries: Any, size: int, real_dim: int, path: str) -> None:
    _require(
        isinstance(entries, list)
        and len(entries) == size
        and all(isinstance(row, list) and len(row) == size for row in entries),
        path,
        f"must be a {size} x {size} matrix of formulas",
    )
    for a, row in enumerate(entries):
        for b, expr in enumerate(row):
            try:
                parse_formula(expr, real_dim)
            except FormulaError as e:
                raise ConfigError(f"{path}[{a}][{b}]", str(e))


def _validate_grid(grid: Dict[str, Any]) -> None:
    _require(grid.get("complex_dim") in (1, 2), "grid.complex_dim", "must be 1 or 2")
    points = grid.get("points")
    _require(_is_int(points) and points >= 8 and points % 2 == 0, "grid.points", "must be an even integer >= 8")
    periods = grid.get("periods")
    if periods is not None:
        _require(
            isinstance(periods, list)
            and len(periods) == 2 * grid["complex_dim"]
            and all(_is_number(p) and p > 0 for p in periods),
            "grid.periods",
            f"must list {2 * grid['complex_dim']} positive periods",
        )


def _validate_metric(metric: Dict[str, Any], n: int) -> None:
    kind = metric.get("kind")
    _require(kind in METRIC_KINDS, "metric.kind", f"must be one of {', '.join(METRIC_KINDS)}")
    _require(_is_number(metric.get("amplitude")), "metric.amplitude", "must be a number")
    if kind == "nonkaehler":
        _require(abs(metric["amplitude"]) < 1, "metric.amplitude", "must satisfy |amplitude| < 1")
    mode = metric.get("mode")
    if mode is not None:
        _require(
            isinstance(mode, list) and len(mode) == 2 * n and all(_is_int(m) for m in mode),
            "metric.mode",
            f"must list {2 * n} integers",
        )
    if kind == "entries":
        _check_formula_matrix(metric.get("entries"), n, 2 * n, "metric.entries")
    _require(isinstance(metric.get("gauduchon_gauge"), bool), "metric.gauduchon_gauge", "must be true or false")


def _validate_bundle(bundle: Dict[str, Any], n: int) -> None:
    rank = bundle.get("rank")
    _require(_is_int(rank) and rank >= 1, "bundle.rank", "must be an integer >= 1")
    twist = bundle.get("twist")
    if twist is not None:
        _require(
            isinstance(twist, list)
            and len(twist) == rank
            and all(isinstance(row, list) and len(row) == n and all(_is_int(d) for d in row) for row in twist),
            "bundle.twist",
            f"must be a {rank} x {n} integer matrix",
        )
    theta = bundle.get("theta")
    if theta is not None:
        _require(isinstance(theta, list) and len(theta) == n, "bundle.theta", f"must list {n} matrices")
        for j, entries in enumerate(theta):
            _check_formula_matrix(entries, rank, 2 * n, f"bundle.theta[{j}]")
    _check_positive(bundle.get("holomorphy_tol"), "bundle.holomorphy_tol", allow_none=True)

    initial = bundle.get("initial_metric", {})
    kind = initial.get("kind")
    _require(
        kind in INITIAL_METRIC_KINDS,
        "bundle.initial_metric.kind",
        f"must be one of {', '.join(INITIAL_METRIC_KINDS)}",
    )
    if kind == "log_entries":
        _check_formula_matrix(initial.get("entries"), rank, 2 * n, "bundle.initial_metric.entries")
    _require(_is_number(initial.get("amplitude")), "bundle.initial_metric.amplitude", "must be a number")
    _require(
        _is_int(initial.get("max_mode")) and initial["max_mode"] >= 0,
        "bundle.initial_metric.max_mode",
        "must be an integer >= 0",
    )
    _require(isinstance(initial.get("det_gauge"), bool), "bundle.initial_metric.det_gauge", "must be true or false")

    start = bundle.get("start", {})
    kind = start.get("kind")
    _require(kind in START_KINDS, "bundle.start.kind", f"must be one of {', '.join(START_KINDS)}")
    if kind == "log_entries":
        _check_formula_matrix(start.get("entries"), rank, 2 * n, "bundle.start.entries")
    _require(_is_number(start.get("amplitude")), "bundle.start.amplitude", "must be a number")
    _require(
        _is_int(start.get("max_mode")) and start["max_mode"] >= 0,
        "bundle.start.max_mode",
        "must be an integer >= 0",
    )


def _validate_flow(flow: Dict[str, Any]) -> None:
    _check_positive(flow.get("dt"), "flow.dt", allow_none=True)
    _require(_is_int(flow.get("max_steps")) and flow["max_steps"] >= 0, "flow.max_steps", "must be an integer >= 0")
    _check_positive(flow.get("stop_Y"), "flow.stop_Y", allow_none=True)
    _require(
        _is_int(flow.get("functional_quadrature_nodes")) and flow["functional_quadrature_nodes"] >= 8,
        "flow.functional_quadrature_nodes",
        "must be an integer >= 8",
    )
    _require(flow.get("scheme") in SCHEMES, "flow.scheme", f"must be one of {', '.join(SCHEMES)}")
    _check_positive(flow.get("blowup_threshold"), "flow.blowup_threshold", allow_none=True)
    _require(_is_int(flow.get("max_halvings")) and flow["max_halvings"] >= 0, "flow.max_halvings", "must be an integer >= 0")
    _require(_is_number(flow.get("sup_slack")) and flow["sup_slack"] >= 0, "flow.sup_slack", "must be >= 0")
    _require(_is_int(flow.get("keep_snapshots")) and flow["keep_snapshots"] >= 1, "flow.keep_snapshots", "must be an integer >= 1")


def _validate_stability(stability: Dict[str, Any]) -> None:
    sigmas = stability.get("sigmas")
    _require(
        isinstance(sigmas, list) and len(sigmas) >= 2 and all(_is_number(s) and 0 < s <= 1 for s in sigmas),
        "stability.sigmas",
        "must list at least 2 values in (0, 1]",
    )
    _require(_is_int(stability.get("samples")) and stability["samples"] >= 2, "stability.samples", "must be an integer >= 2")
    _require(
        _is_int(stability.get("snapshot_every")) and stability["snapshot_every"] >= 0,
        "stability.snapshot_every",
        "must be an integer >= 0",
    )
    for name in ("gap", "threshold"):
        value = stability.get(name)
        _require(_is_number(value) and 0 < value < 1, f"stability.{name}", "must lie in (0, 1)")
    _check_positive(stability.get("residual_gate"), "stability.residual_gate")
    _require(_is_number(stability.get("slope_tol")) and stability["slope_tol"] >= 0, "stability.slope_tol", "must be >= 0")


def validate_config(config: Dict[str, Any]) -> None:
    """Raise ConfigError naming the first offending field."""
    for section in ("grid", "metric", "bundle", "flow", "stability", "verify", "output"):
        _require(isinstance(config.get(section), dict), section, "section missing or not a mapping")
    _require(
        isinstance(config.get("scenario"), str) and config["scenario"].strip() != "",
        "scenario",
        "must be a non-empty name",
    )
    _require(_is_int(config.get("seed")) and config["seed"] >= 0, "seed", "must be an integer >= 0")

    _validate_grid(config["grid"])
    n = config["grid"]["complex_dim"]
    _validate_metric(config["metric"], n)
    _validate_bundle(config["bundle"], n)
    _validate_flow(config["flow"])
    _validate_stability(config["stability"])

    verify = config["verify"]
    _require(_is_int(verify.get("random_forms")) and verify["random_forms"] >= 1, "verify.random_forms", "must be an integer >= 1")
    _require(_is_int(verify.get("flow_steps")) and verify["flow_steps"] >= 3, "verify.flow_steps", "must be an integer >= 3")
    _check_positive(verify.get("dt"), "verify.dt")

    output = config["output"]
    _require(_is_int(output.get("record_every")) and output["record_every"] >= 1, "output.record_every", "must be an integer >= 1")
    _require(isinstance(output.get("dir"), str) and output["dir"].strip() != "", "output.dir", "must be a non-empty path")
    _require(isinstance(output.get("snapshot"), bool), "output.snapshot", "must be true or false")


def get_preset_path(preset_name: str) -> Path:
    """Get the full path to a bundled preset."""
    name = preset_name if preset_name.endswith(".json") else f"{preset_name}.json"
    return Path(__file__).parent.parent / "presets" / name


def list_presets() -> List[str]:
    """List bundled preset names."""
    presets_dir = Path(__file__).parent.parent / "presets"
    if not presets_dir.exists():
        return []

    return sorted(f.stem for f in presets_dir.glob("*.json"))


def resolve_config(
    source: Union[str, Path], overrides: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    """Load a config path or bundled preset name, merge over defaults and validate."""
    path = Path(source)
    if not path.exists():
        preset = get_preset_path(str(source))
        if not preset.exists():
            raise ValueError(f"No config file or preset named {source}")
        path = preset
    config = merge_config(get_default_config(), load_config(path))
    if overrides:
        config = merge_config(config, overrides)
    validate_config(config)
    return config
