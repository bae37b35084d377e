import numpy as np
import pytest

from src.geometry import (
    build_metric,
    chern_divergence,
    classification_residuals,
    complex_laplacian,
    gauduchon_gauge,
    integration_by_parts_check,
    lambda_contract,
    torsion_adjoint_check,
    torsion_divergence_check,
    random_test_forms,
    solve_complex_laplacian,
    torsion_identity_residuals,
)
from src.lattice import LatticeGrid, random_scalar_field


@pytest.fixture(scope="module")
def fine_surface():
    return LatticeGrid(complex_dim=2, points_per_axis=16)


@pytest.fixture(scope="module")
def fine_nonkaehler(fine_surface):
    return build_metric(fine_surface, {"kind": "nonkaehler", "amplitude": 0.1})


def test_flat_metric_is_kaehler(flat_surface):
    assert np.allclose(flat_surface.vol, 1.0)
    assert flat_surface.is_flat
    assert all(v < 1e-14 for v in classification_residuals(flat_surface).values())


def test_metrics_are_volume_normalized(surface_grid):
    for spec in ({"kind": "kaehler_perturbed", "amplitude": 0.3}, {"kind": "nonkaehler", "amplitude": 0.2}):
        metric = build_metric(surface_grid, spec)
        assert abs(surface_grid.integrate(np.ones(surface_grid.shape), metric.vol) - 1.0) < 1e-12


def test_kaehler_perturbation_has_no_torsion(surface_grid):
    metric = build_metric(surface_grid, {"kind": "kaehler_perturbed", "amplitude": 0.3})
    residuals = classification_residuals(metric)
    assert residuals["kaehler_res"] < 1e-10
    assert residuals["gauduchon_res"] < 1e-10
    assert not metric.is_flat


def test_nonkaehler_metric_is_not_gauduchon(nonkaehler_surface):
    residuals = classification_residuals(nonkaehler_surface)
    assert residuals["kaehler_res"] > 1e-3
    assert residuals["gauduchon_res"] > 1e-3


def test_build_metric_rejects_bad_specs(surface_grid):
    with pytest.raises(ValueError, match="unknown metric kind"):
        build_metric(surface_grid, {"kind": "spherical"})
    with pytest.raises(ValueError, match="positivity"):
        build_metric(surface_grid, {"kind": "nonkaehler", "amplitude": 1.5})
    with pytest.raises(ValueError):
        build_metric(surface_grid, {"kind": "entries", "entries": [["1"]]})


def test_entries_metric(line_grid):
    metric = build_metric(line_grid, {"kind": "entries", "entries": [["2"]]})
    assert np.allclose(metric.g, 1.0)


def test_lambda_contract_of_metric_is_dimension(nonkaehler_surface):
    assert np.allclose(lambda_contract(nonkaehler_surface.g, nonkaehler_surface), 2.0)


def test_chern_divergence_equals_torsion_form(nonkaehler_surface):
    divergence, torsion_form = chern_divergence(nonkaehler_surface)
    assert np.max(np.abs(divergence - torsion_form)) < 1e-10
    assert np.max(np.abs(divergence)) > 1e-3


def test_gauduchon_gauge_matches_analytic_factor(fine_surface, fine_nonkaehler):
    u, gauged = gauduchon_gauge(fine_nonkaehler)
    x = fine_surface.coordinates()
    factor = 1.0 / (2.0 + 0.1 * np.cos(2 * np.pi * (x[0] + x[2])))
    assert np.max(np.abs(u - factor / np.mean(factor))) < 1e-10
    assert classification_residuals(gauged)["gauduchon_res"] < 1e-10
    assert classification_residuals(gauged)["kaehler_res"] > 1e-2


def test_gauduchon_gauge_recovers_conformal_kaehler_factor(fine_surface):
    metric = build_metric(
        fine_surface, {"kind": "entries", "entries": [["1", "0"], ["0", "1+0.1*cos(2*pi*x0)"]]}
    )
    u, gauged = gauduchon_gauge(metric)
    factor = 1.0 / (1.0 + 0.1 * np.cos(2 * np.pi * fine_surface.coordinates()[0]))
    assert np.max(np.abs(u - factor / np.mean(factor))) < 1e-9
    assert classification_residuals(gauged)["kaehler_res"] < 1e-8
    assert classification_residuals(gauged)["gauduchon_res"] < 1e-8


def test_gauduchon_gauge_is_trivial_on_curves(flat_line):
    u, metric = gauduchon_gauge(flat_line)
    assert np.all(u == 1.0)
    assert metric is flat_line


def test_laplacian_solve_flat(flat_line, line_grid):
    x0 = line_grid.coordinates()[0]
    rho = np.cos(2 * np.pi * x0)
    phi = solve_complex_laplacian(flat_line, rho)
    assert np.isrealobj(phi)
    assert np.allclose(phi, -rho / np.pi ** 2, atol=1e-12)


def test_laplacian_solve_rejects_incompatible_source(flat_line, line_grid):
    with pytest.raises(ValueError, match="compatibility"):
        solve_complex_laplacian(flat_line, np.ones(line_grid.shape))


def test_laplacian_solve_variable_metric(line_grid, rng):
    metric = build_metric(line_grid, {"kind": "kaehler_perturbed", "amplitude": 0.3})
    psi = random_scalar_field(line_grid, rng, max_mode=2)
    rho = complex_laplacian(metric, psi).real
    phi = solve_complex_laplacian(metric, rho)
    assert np.max(np.abs(phi - (psi - np.mean(psi)))) < 1e-8


def test_integral_identities_on_nonkaehler_metric(fine_nonkaehler, rng):
    for phi, psi in random_test_forms(fine_nonkaehler.grid, rng, 3):
        assert torsion_adjoint_check(fine_nonkaehler, psi, phi)["relative"] < 1e-8
        assert torsion_divergence_check(fine_nonkaehler, phi)["relative"] < 1e-7


def test_torsion_identities_hold_after_gauge(fine_nonkaehler):
    _, gauged = gauduchon_gauge(fine_nonkaehler)
    residuals = torsion_identity_residuals(gauged)
    assert residuals["gaud_id"] < 1e-6
    assert classification_residuals(gauged)["kaehler_res"] > 1e-2
    assert torsion_identity_residuals(fine_nonkaehler)["gaud_id"] > 1e-3


def test_integration_by_parts_needs_balanced_metric(line_grid, nonkaehler_surface, rng):
    kaehler = build_metric(line_grid, {"kind": "kaehler_perturbed", "amplitude": 0.3})
    for phi, psi in random_test_forms(line_grid, rng, 3):
        assert integration_by_parts_check(kaehler, phi, psi)["relative"] < 1e-10
    phi, psi = random_test_forms(nonkaehler_surface.grid, rng, 1)[0]
    assert integration_by_parts_check(nonkaehler_surface, phi, psi)["relative"] > 1e-6


def test_torsion_adjoint_on_flat_metric(flat_surface, rng):
    for phi, psi in random_test_forms(flat_surface.grid, rng, 3):
        check = torsion_adjoint_check(flat_surface, psi, phi)
        assert abs(check["rhs"]) < 1e-14
        assert check["relative"] < 1e-12
        assert integration_by_parts_check(flat_surface, phi, psi)["relative"] < 1e-12
