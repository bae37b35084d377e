import numpy as np
import pytest

from src.bundle import (
    BundleMetricState,
    build_bundle,
    chern_curvature,
    chern_numbers,
    chern_weil_slope,
    contracted_curvature,
    curvature_difference_residual,
    degree_slope,
    det_gauge_initial_metric,
    dprime_norm_sq,
    higgs_adjoint,
    higgs_residuals,
    laplacian_D,
    random_sections,
    section_curvature_residual,
    trace_condition_residual,
    twist_consistency_residual,
)
from src.geometry import build_metric, gauduchon_gauge
from src.lattice import LatticeGrid, random_hermitian_field, random_scalar_field
from src.matfuncs import herm_exp, identity_field, trace

from .conftest import heat_mode_state


def _random_state(grid, rank, rng, amplitude=0.2):
    H = herm_exp(random_hermitian_field(grid, rng, rank, amplitude=amplitude))
    return BundleMetricState(H=H, H0=identity_field(grid.shape, rank))


def test_rejects_bad_shapes(line_grid):
    with pytest.raises(ValueError, match="rank"):
        build_bundle(line_grid, {"rank": 0})
    with pytest.raises(ValueError, match="twist"):
        build_bundle(line_grid, {"rank": 2, "twist": [[1]]})
    with pytest.raises(ValueError, match="different twist"):
        build_bundle(line_grid, {"rank": 2, "twist": [[1], [-1]], "theta": [[[0, 1], [0, 0]]]})


def test_non_holomorphic_higgs_field_is_reported(line_grid, capsys):
    bundle = build_bundle(line_grid, {"rank": 1, "theta": [[["cos(2*pi*x0)"]]]})
    assert higgs_residuals(bundle)["holomorphy"] > 1.0
    assert "exceeds" in capsys.readouterr().out


def test_twisted_potential_matches_background_curvature(line_grid, surface_grid):
    assert twist_consistency_residual(build_bundle(line_grid, {"rank": 2, "twist": [[1], [-1]]})) < 1e-10
    bundle = build_bundle(surface_grid, {"rank": 2, "twist": [[1, 2], [-1, 0]]})
    assert twist_consistency_residual(bundle) < 1e-10


def test_chern_curvature_of_line_bundle_mode(line_grid, line_bundle):
    amplitude = 0.05
    state = heat_mode_state(line_grid, amplitude)
    F = chern_curvature(state, line_bundle)
    assert F.shape == line_grid.shape + (1, 1, 1, 1)
    expected = np.pi ** 2 * amplitude * np.cos(2 * np.pi * line_grid.coordinates()[0])
    assert np.max(np.abs(F[..., 0, 0, 0, 0] - expected)) < 1e-10


def test_chern_curvature_at_identity_is_background(split_bundle, line_grid):
    F = chern_curvature(BundleMetricState.identity(line_grid, 2), split_bundle)
    assert np.allclose(F, np.broadcast_to(split_bundle.background_curvature, F.shape), atol=1e-12)
    assert np.allclose(F[..., 0, 0, :, :], np.pi * np.diag([1.0, -1.0]), atol=1e-12)


def test_higgs_adjoint_is_metric_adjoint(line_grid, rng):
    H = _random_state(line_grid, 2, rng).H
    theta = rng.standard_normal(line_grid.shape + (1, 2, 2)) + 1j * rng.standard_normal(line_grid.shape + (1, 2, 2))
    adjoint = higgs_adjoint(theta, H)
    conj_theta = np.conj(np.swapaxes(theta, -1, -2))
    assert np.allclose(H[..., None, :, :] @ adjoint, conj_theta @ H[..., None, :, :], atol=1e-10)
    assert np.allclose(higgs_adjoint(theta, identity_field(line_grid.shape, 2)), conj_theta)


def test_nilpotent_higgs_field_curvature(line_grid, flat_line):
    bundle = build_bundle(line_grid, {"rank": 2, "theta": [[[0, 1], [0, 0]]]})
    state = BundleMetricState.identity(line_grid, 2)
    curvature = contracted_curvature(state, bundle, flat_line)
    assert np.allclose(curvature, np.diag([1.0, -1.0]), atol=1e-12)
    assert degree_slope(state, bundle, flat_line)["deg"] == pytest.approx(0.0, abs=1e-12)


def test_twisted_line_bundle_degree(line_grid, flat_line, rng):
    bundle = build_bundle(line_grid, {"rank": 1, "twist": [[1]]})
    state = BundleMetricState.identity(line_grid, 1)
    assert degree_slope(state, bundle, flat_line)["deg"] == pytest.approx(np.pi)

    f = random_scalar_field(line_grid, rng, amplitude=0.3)
    bent = BundleMetricState(H=np.exp(f)[..., None, None].astype(complex), H0=state.H0)
    assert degree_slope(bent, bundle, flat_line)["deg"] == pytest.approx(np.pi, abs=1e-10)


def test_split_bundle_has_zero_slope(split_bundle, flat_line, line_grid):
    state = BundleMetricState.identity(line_grid, 2)
    assert np.allclose(contracted_curvature(state, split_bundle, flat_line), np.diag([np.pi, -np.pi]))
    assert degree_slope(state, split_bundle, flat_line)["mu"] == pytest.approx(0.0, abs=1e-12)


def test_det_gauge_enforces_trace_condition(line_grid):
    metric = build_metric(line_grid, {"kind": "kaehler_perturbed", "amplitude": 0.3})
    bundle = build_bundle(line_grid, {"rank": 1, "twist": [[1]]})
    K = BundleMetricState.identity(line_grid, 1)
    assert trace_condition_residual(K, bundle, metric) > 1e-2
    gauged = det_gauge_initial_metric(K, bundle, metric)
    assert trace_condition_residual(gauged, bundle, metric) < 1e-7


def test_curvature_difference_identity(diagonal_higgs_bundle, line_grid, rng):
    state = _random_state(line_grid, 2, rng)
    assert curvature_difference_residual(state, diagonal_higgs_bundle) < 1e-8


def test_section_identity(diagonal_higgs_bundle, line_grid, rng):
    state = _random_state(line_grid, 2, rng)
    sections = random_sections(line_grid, 2, rng, 3)
    assert section_curvature_residual(state, diagonal_higgs_bundle, sections) < 1e-8


def test_section_identity_needs_trivial_bundle(split_bundle, line_grid, rng):
    state = BundleMetricState.identity(line_grid, 2)
    with pytest.raises(ValueError, match="trivial"):
        section_curvature_residual(state, split_bundle, random_sections(line_grid, 2, rng, 1))


def test_laplacian_on_scalar_endomorphisms(line_bundle, flat_line, line_grid):
    state = BundleMetricState.identity(line_grid, 1)
    f = np.cos(2 * np.pi * line_grid.coordinates()[0])
    result = laplacian_D(f[..., None, None].astype(complex), state, line_bundle, flat_line)
    assert np.allclose(result[..., 0, 0], -np.pi ** 2 * f, atol=1e-10)


def test_identity_is_parallel(diagonal_higgs_bundle, flat_line, line_grid, rng):
    state = _random_state(line_grid, 2, rng)
    eye = identity_field(line_grid.shape, 2)
    assert dprime_norm_sq(eye, state, diagonal_higgs_bundle, flat_line) < 1e-20


def test_chern_weil_slope_of_split_summand(split_bundle, flat_line, line_grid):
    state0 = BundleMetricState.identity(line_grid, 2)
    pi = np.broadcast_to(np.diag([1.0, 0.0]).astype(complex), line_grid.shape + (2, 2))
    assert chern_weil_slope(pi, state0, split_bundle, flat_line) == pytest.approx(np.pi)

    eye = identity_field(line_grid.shape, 2)
    with pytest.raises(ValueError, match="proper"):
        chern_weil_slope(eye, state0, split_bundle, flat_line)
    assert chern_weil_slope(eye, state0, split_bundle, flat_line, proper=False) == pytest.approx(0.0, abs=1e-12)


def test_chern_numbers_of_split_surface_bundle(surface_grid, flat_surface):
    bundle = build_bundle(surface_grid, {"rank": 2, "twist": [[1, 1], [-1, -1]]})
    state = BundleMetricState.identity(surface_grid, 2)
    numbers = chern_numbers(state, bundle, flat_surface)
    assert numbers["c1_sq"] == pytest.approx(0.0, abs=1e-10)
    assert numbers["c2"] == pytest.approx(-2 * np.pi ** 2)
    assert numbers["bg_integrand"] == pytest.approx(-8 * np.pi ** 2)


def test_chern_numbers_need_a_surface(split_bundle, flat_line, line_grid):
    with pytest.raises(ValueError, match="dimension 2"):
        chern_numbers(BundleMetricState.identity(line_grid, 2), split_bundle, flat_line)


def test_curvature_is_cached(line_bundle, flat_line, line_grid):
    state = BundleMetricState.identity(line_grid, 1)
    first = contracted_curvature(state, line_bundle, flat_line)
    assert contracted_curvature(state, line_bundle, flat_line) is first
    assert np.allclose(trace(first), 0.0)


@pytest.fixture(scope="module")
def fine_metrics():
    grid = LatticeGrid(complex_dim=2, points_per_axis=16)
    nonkaehler = build_metric(grid, {"kind": "nonkaehler", "amplitude": 0.1})
    return grid, nonkaehler, gauduchon_gauge(nonkaehler)[1]


def test_degree_ignores_the_metric_on_gauduchon_surfaces(fine_metrics):
    grid, nonkaehler, gauduchon = fine_metrics
    bundle = build_bundle(grid, {"rank": 2, "twist": [[1, 0], [0, 1]]})
    identity = BundleMetricState.identity(grid, 2)
    bent = _random_state(grid, 2, np.random.default_rng(11))
    assert degree_slope(bent, bundle, gauduchon)["deg"] == pytest.approx(
        degree_slope(identity, bundle, gauduchon)["deg"], abs=1e-8
    )
    drift = degree_slope(bent, bundle, nonkaehler)["deg"] - degree_slope(identity, bundle, nonkaehler)["deg"]
    assert abs(drift) > 1e-6
