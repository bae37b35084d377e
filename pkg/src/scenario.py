"""Assemble lattice, base metric, bundle and initial bundle metric from a run config."""

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from .bundle import BundleMetricState, HiggsBundleData, build_bundle, det_gauge_initial_metric
from .formulas import evaluate_matrix
from .geometry import HermitianMetricField, build_metric, gauduchon_gauge
from .lattice import LatticeGrid, random_hermitian_field
from .matfuncs import herm_exp, herm_sqrt, hermitize


@dataclass(eq=False)
class Scenario:
    config: Dict[str, Any]
    grid: LatticeGrid
    metric: HermitianMetricField
    gauge_factor: np.ndarray
    bundle: HiggsBundleData
    state0: BundleMetricState


def build_grid(config: Dict[str, Any]) -> LatticeGrid:
    spec = config["grid"]
    periods = spec.get("periods")
    return LatticeGrid(
        complex_dim=spec["complex_dim"],
        points_per_axis=spec["points"],
        periods=tuple(periods) if periods is not None else None,
        dealias=bool(spec.get("dealias", False)),
    )


def _log_field(
    bundle: HiggsBundleData, spec: Dict[str, Any], rng: np.random.Generator, traceless: bool
) -> np.ndarray:
    """Hermitian log-metric field restricted to equal-twist blocks."""
    grid = bundle.grid
    if spec["kind"] == "log_entries":
        log = hermitize(evaluate_matrix(spec["entries"], grid.coordinates()))
    else:
        log = random_hermitian_field(
            grid,
            rng,
            bundle.rank,
            max_mode=spec.get("max_mode", 1),
            amplitude=spec.get("amplitude", 0.0),
            traceless=traceless,
        )
    return log * bundle.block_mask


def initial_reference(
    bundle: HiggsBundleData, spec: Dict[str, Any], rng: np.random.Generator
) -> BundleMetricState:
    """Reference metric K before the det gauge."""
    if spec["kind"] == "identity":
        return BundleMetricState.identity(bundle.grid, bundle.rank)
    K = herm_exp(_log_field(bundle, spec, rng, traceless=False))
    return BundleMetricState(H=K, H0=K.copy())


def perturbed_start(
    reference: BundleMetricState, bundle: HiggsBundleData, spec: Dict[str, Any], rng: np.random.Generator
) -> BundleMetricState:
    """Start metric H0^{1/2} e^R H0^{1/2}; R = 0 for kind ``none``."""
    if spec["kind"] == "none":
        return BundleMetricState(H=reference.H.copy(), H0=reference.H0)
    log = _log_field(bundle, spec, rng, traceless=spec.get("traceless", True))
    root = herm_sqrt(reference.H0)
    return BundleMetricState(H=hermitize(root @ herm_exp(log) @ root), H0=reference.H0)


def build_scenario(config: Dict[str, Any]) -> Scenario:
    """Build every run ingredient from a validated config; the seed fixes all random fields."""
    rng = np.random.default_rng(config["seed"])
    grid = build_grid(config)
    metric = build_metric(grid, config["metric"])

    gauge_factor = np.ones(grid.shape)
    if config["metric"].get("gauduchon_gauge"):
        print("🧮 Computing Gauduchon gauge...")
        gauge_factor, metric = gauduchon_gauge(metric)

    bundle_spec = config["bundle"]
    bundle = build_bundle(grid, bundle_spec)
    reference = initial_reference(bundle, bundle_spec["initial_metric"], rng)
    if bundle_spec["initial_metric"].get("det_gauge", True):
        reference = det_gauge_initial_metric(reference, bundle, metric)
    state0 = perturbed_start(reference, bundle, bundle_spec["start"], rng)

    return Scenario(
        config=config,
        grid=grid,
        metric=metric,
        gauge_factor=gauge_factor,
        bundle=bundle,
        state0=state0,
    )
