from collections import deque

import numpy as np
import pytest

from src.bundle import BundleMetricState, build_bundle
from src.flow import FlowDiagnostics
from src.matfuncs import identity_field
from src.stability import (
    ProjectionCandidate,
    VerdictWithheld,
    blowup_sample,
    collect_blowup_samples,
    destabilization_verdict,
    dominated_convergence_series,
    extract_projection,
    fdot_decay,
    projection_residuals,
    sigma_inequality_check,
    sigma_power_consistency,
    sup_vs_L1_check,
)

SIGMAS = [0.5, 0.2, 0.1, 0.05]
TIMES = [2.0, 2.1, 2.2, 2.4]


def _split_state(grid, t):
    """Exact split-bundle flow h = diag(e^{-pi t}, e^{pi t}) from H0 = I."""
    H = np.broadcast_to(np.diag(np.exp([-np.pi * t, np.pi * t])).astype(complex), grid.shape + (2, 2))
    return BundleMetricState(H=H.copy(), H0=identity_field(grid.shape, 2), t=t)


@pytest.fixture
def split_samples(line_grid):
    return [blowup_sample(_split_state(line_grid, t), SIGMAS) for t in TIMES]


def test_normalized_metric_has_unit_trace_sup(split_samples):
    for sample in split_samples:
        assert np.max(np.sum(sample.eigvals, axis=-1)) == pytest.approx(1.0)
        assert sample.trace_sup == pytest.approx(2 * np.cosh(np.pi * sample.t))


def test_sigma_powers_are_consistent(split_samples, flat_line):
    sample = split_samples[-1]
    for sigma in SIGMAS:
        assert sigma_power_consistency(sample, sigma) < 1e-10
    assert sup_vs_L1_check(sample, flat_line) == pytest.approx(1.0)
    assert np.allclose(sample.power(0.3)[0, 0], np.diag(sample.eigvals[0, 0] ** 0.3))


def test_split_run_yields_the_destabilizing_summand(split_samples, split_bundle, flat_line, line_grid):
    candidate = extract_projection(split_samples, split_bundle, flat_line)
    assert candidate.sigma == 0.5
    assert candidate.t == TIMES[-1]
    assert candidate.rank_estimate == 1
    assert np.allclose(candidate.pi, np.diag([1.0, 0.0]), atol=1e-12)
    assert candidate.residuals["idempotent"] < 1e-3

    state0 = BundleMetricState.identity(line_grid, 2)
    verdict = destabilization_verdict(candidate, state0, split_bundle, flat_line)
    assert verdict["destabilizing"]
    assert verdict["mu_sub"] == pytest.approx(np.pi)
    assert verdict["mu_E"] == pytest.approx(0.0, abs=1e-12)
    assert verdict["rhs"] == pytest.approx(np.pi)


def test_small_sigmas_fail_the_residual_gate(split_samples, split_bundle, flat_line):
    with pytest.raises(VerdictWithheld, match="sigma=0.05"):
        extract_projection(split_samples, split_bundle, flat_line, gate=1e-6)


def test_bounded_metrics_withhold_a_verdict(line_grid, split_bundle, flat_line):
    samples = [
        blowup_sample(BundleMetricState(H=identity_field(line_grid.shape, 2), H0=identity_field(line_grid.shape, 2), t=t), SIGMAS)
        for t in TIMES
    ]
    with pytest.raises(VerdictWithheld, match="rank"):
        extract_projection(samples, split_bundle, flat_line)


def test_extraction_needs_several_samples(split_samples, split_bundle, flat_line):
    with pytest.raises(ValueError, match="at least 2"):
        extract_projection(split_samples[:1], split_bundle, flat_line)


def test_collect_requires_a_divergent_run(line_grid):
    states = deque(_split_state(line_grid, t) for t in TIMES)
    with pytest.raises(ValueError, match="not divergent"):
        collect_blowup_samples(FlowDiagnostics(status="converged", snapshots=states), SIGMAS)

    diagnostics = FlowDiagnostics(status="diverged", snapshots=states)
    with pytest.raises(ValueError, match="sigma"):
        collect_blowup_samples(diagnostics, [1.5])
    assert [s.t for s in collect_blowup_samples(diagnostics, SIGMAS, count=2)] == TIMES[-2:]
    picked = collect_blowup_samples(diagnostics, SIGMAS, sample_times=[2.39, 2.01, 2.02])
    assert [s.t for s in picked] == [2.0, 2.4]


def test_projection_residuals_flag_non_projections(line_grid, split_bundle, flat_line):
    reference = BundleMetricState.identity(line_grid, 2)
    half = 0.5 * identity_field(line_grid.shape, 2)
    residuals = projection_residuals(half, reference, split_bundle, flat_line)
    assert residuals["idempotent"] == pytest.approx(0.25)
    assert residuals["self_adjoint"] == 0.0
    assert residuals["weak_hol"] == pytest.approx(0.0, abs=1e-12)


def test_verdict_rejects_improper_candidates(line_grid, split_bundle, flat_line):
    pi = identity_field(line_grid.shape, 2)
    candidate = ProjectionCandidate(pi=pi, pi_raw=pi, sigma=0.5, t=1.0, rank_estimate=2)
    with pytest.raises(ValueError, match="not proper"):
        destabilization_verdict(candidate, BundleMetricState.identity(line_grid, 2), split_bundle, flat_line)


def test_sigma_inequality_on_constant_metrics(split_samples, split_bundle, flat_line, line_grid):
    state0 = BundleMetricState.identity(line_grid, 2)
    check = sigma_inequality_check(split_samples[-1], state0, split_bundle, flat_line, 0.5)
    assert check["lhs"] == pytest.approx(0.0, abs=1e-20)
    assert check["rhs"] > 0


def test_dominated_convergence_rate_decays(split_samples, flat_line):
    series = dominated_convergence_series(split_samples, 0.5, flat_line)
    assert np.all(np.diff(series["f"]) < 0)
    assert fdot_decay(split_samples, 0.5, flat_line) < 1.0
    with pytest.raises(ValueError, match="at least 4"):
        fdot_decay(split_samples[:3], 0.5, flat_line)


NILPOTENT_TIMES = [19.2, 20.4, 21.6, 22.06]


def _nilpotent_state(grid, t, a=3.0):
    """Exact flow for theta = a E12 from H0 = I: H = diag(rho^(1/2), rho^(-1/2)), rho = 1/(1+2a^2 t)."""
    rho = 1.0 / (1.0 + 2.0 * a * a * t)
    H = np.broadcast_to(np.diag([np.sqrt(rho), 1.0 / np.sqrt(rho)]).astype(complex), grid.shape + (2, 2))
    return BundleMetricState(H=H.copy(), H0=identity_field(grid.shape, 2), t=t)


@pytest.fixture
def nilpotent_bundle(line_grid):
    return build_bundle(line_grid, {"rank": 2, "theta": [[[0, 3], [0, 0]]]})


def test_nilpotent_kernel_line_is_higgs_invariant(line_grid, nilpotent_bundle, flat_line):
    samples = [blowup_sample(_nilpotent_state(line_grid, t), [1.0, 0.5]) for t in NILPOTENT_TIMES]
    candidate = extract_projection(samples, nilpotent_bundle, flat_line)
    assert candidate.sigma == 1.0
    assert np.allclose(candidate.pi, np.diag([1.0, 0.0]), atol=1e-12)

    complement = identity_field(line_grid.shape, 2) - candidate.pi
    invariance = complement[..., None, :, :] @ nilpotent_bundle.theta @ candidate.pi[..., None, :, :]
    assert np.max(np.abs(invariance)) <= 1e-3
    assert candidate.residuals["higgs_invariance"] <= 1e-3
    assert [record["sigma"] for record in candidate.per_sigma] == [0.5, 1.0]
    assert candidate.per_sigma[0]["residuals"]["idempotent"] > 1e-2

    verdict = destabilization_verdict(candidate, BundleMetricState.identity(line_grid, 2), nilpotent_bundle, flat_line)
    assert verdict["mu_sub"] == pytest.approx(0.0, abs=1e-9)
    assert verdict["destabilizing"]


def test_nilpotent_withheld_verdict_keeps_residuals(line_grid, nilpotent_bundle, flat_line):
    samples = [blowup_sample(_nilpotent_state(line_grid, t), SIGMAS) for t in NILPOTENT_TIMES]
    with pytest.raises(VerdictWithheld, match="depends on sigma") as info:
        extract_projection(samples, nilpotent_bundle, flat_line)
    records = info.value.per_sigma
    assert [record["sigma"] for record in records] == sorted(SIGMAS)
    assert all("higgs_invariance" in record["residuals"] for record in records)
    assert records[0]["rank"] == 0 and records[-1]["rank"] == 1


def test_sigma_dependent_rank_withholds_a_verdict(line_grid, split_bundle, flat_line):
    samples = [blowup_sample(_split_state(line_grid, t), SIGMAS) for t in [0.6, 0.7, 0.8, 0.9]]
    with pytest.raises(VerdictWithheld, match="depends on sigma") as info:
        extract_projection(samples, split_bundle, flat_line)
    ranks = {record["sigma"]: record["rank"] for record in info.value.per_sigma}
    assert ranks[0.05] == 0
    assert ranks[0.5] == 1
