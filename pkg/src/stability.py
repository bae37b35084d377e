"""Blowup analysis of divergent runs: normalized metrics, sigma-powers and the weak projection.

On a run whose trace of h blows up, h~ = h / sup Tr h has eigenvalues in (0, 1] and some
of them collapse to zero. The fields I - h~^sigma approach a self-adjoint idempotent that
cuts out a subobject; its Chern-Weil slope decides whether that subobject destabilizes.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .bundle import (
    BundleMetricState,
    HiggsBundleData,
    chern_weil_slope,
    contracted_curvature,
    ddoubleprime,
    degree_slope,
    dprime,
    dprime_norm_sq,
    endo_form_norm_density,
)
from .flow import FlowDiagnostics, sup_contracted
from .geometry import HermitianMetricField
from .matfuncs import assemble, herm_func, identity_field, metric_adjoint, trace

RESIDUAL_GATES = ("idempotent", "self_adjoint", "weak_hol")


class VerdictWithheld(RuntimeError):
    """No sample yields a projection with a clear spectral gap and small residuals.

    ``per_sigma`` keeps the rank, gap and pre-snap residuals found for each sigma.
    """

    def __init__(self, message: str, per_sigma: Optional[List[Dict[str, Any]]] = None):
        super().__init__(message)
        self.per_sigma = per_sigma or []


@dataclass(eq=False)
class BlowupSample:
    t: float
    trace_sup: float
    h_tilde: np.ndarray
    sigma_powers: Dict[float, np.ndarray]
    eigvals: np.ndarray
    state: BundleMetricState

    def power(self, sigma: float) -> np.ndarray:
        """h~^sigma, computed on demand for sigmas outside the configured list."""
        if sigma not in self.sigma_powers:
            self.sigma_powers[sigma] = self.state.frame.endo_function(
                lambda w: (w / self.trace_sup) ** sigma
            )
        return self.sigma_powers[sigma]


@dataclass(eq=False)
class ProjectionCandidate:
    pi: np.ndarray
    pi_raw: np.ndarray
    sigma: float
    t: float
    residuals: Dict[str, float] = field(default_factory=dict)
    rank_estimate: int = 0
    spectral_gap: float = 0.0
    per_sigma: List[Dict[str, Any]] = field(default_factory=list)


def blowup_sample(state: BundleMetricState, sigma_list: Sequence[float]) -> BlowupSample:
    frame = state.frame
    if not frame.is_positive:
        raise ValueError(f"bundle metric at t={state.t:.6g} is not positive definite")
    trace_sup = float(np.max(np.sum(frame.eigvals, axis=-1)))
    sample = BlowupSample(
        t=float(state.t),
        trace_sup=trace_sup,
        h_tilde=frame.endo_function(lambda w: w / trace_sup),
        sigma_powers={},
        eigvals=frame.eigvals / trace_sup,
        state=state,
    )
    for sigma in sigma_list:
        sample.power(sigma)
    return sample


def _check_sigmas(sigma_list: Sequence[float]) -> None:
    for sigma in sigma_list:
        if not 0.0 < sigma <= 1.0:
            raise ValueError(f"sigma must lie in (0, 1], got {sigma}")


def collect_blowup_samples(
    diagnostics: FlowDiagnostics,
    sigma_list: Sequence[float],
    sample_times: Optional[Sequence[float]] = None,
    count: int = 4,
    require_divergent: bool = True,
) -> List[BlowupSample]:
    """Normalized samples taken from the run's snapshots.

    With ``sample_times`` the nearest snapshot to each time is used; otherwise the
    last ``count`` snapshots.
    """
    if require_divergent and diagnostics.status != "diverged":
        raise ValueError(f"run is not divergent (status {diagnostics.status})")
    _check_sigmas(sigma_list)
    states = list(diagnostics.snapshots)
    if not states:
        raise ValueError("run kept no snapshots")

    if sample_times is None:
        chosen = states[-count:]
    else:
        times = np.array([s.t for s in states])
        chosen = []
        for t in sample_times:
            state = states[int(np.argmin(np.abs(times - t)))]
            if state not in chosen:
                chosen.append(state)
        chosen.sort(key=lambda s: s.t)
    return [blowup_sample(state, sigma_list) for state in chosen]


def proof_constant(
    diagnostics: FlowDiagnostics,
    state0: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
) -> float:
    """C = sup over the run of |Lambda F_theta| plus sup |Lambda F_theta| at H0."""
    run_sup = float(np.max(diagnostics.column("sup_LF"))) if len(diagnostics) else 0.0
    return run_sup + sup_contracted(state0.reference(), bundle, metric)


def sigma_inequality_check(
    sample: BlowupSample,
    state0: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    sigma: float,
    constant: Optional[float] = None,
) -> Dict[str, float]:
    """int |h~^{-sigma/2} D'_0 h~^sigma|^2 against C int Tr(h~^sigma)."""
    _check_sigmas([sigma])
    grid = bundle.grid
    reference = state0.reference()
    if constant is None:
        constant = sup_contracted(sample.state, bundle, metric) + sup_contracted(reference, bundle, metric)

    power = sample.power(sigma)
    damp = sample.state.frame.endo_function(lambda w: (w / sample.trace_sup) ** (-0.5 * sigma))
    ones, zeros = dprime(power, reference, bundle)
    damp = damp[..., None, :, :]
    density = endo_form_norm_density(damp @ ones, damp @ zeros, reference.H, metric)
    lhs = float(grid.integrate(density, metric.vol).real)
    rhs = constant * float(grid.integrate(trace(power).real, metric.vol).real)
    return {"lhs": lhs, "rhs": rhs, "sigma": sigma, "constant": constant}


def sup_vs_L1_check(sample: BlowupSample, metric: HermitianMetricField) -> float:
    """sup Tr h~ over the L1 norm int Tr h~ vol."""
    tr = np.sum(sample.eigvals, axis=-1)
    return float(np.max(tr)) / float(metric.grid.integrate(tr, metric.vol).real)


def sigma_power_consistency(sample: BlowupSample, sigma: float) -> float:
    """max |(h~^sigma)^{1/sigma} - h~| through an independent eigen-decomposition."""
    frame = sample.state.frame
    sym = frame.to_sym(sample.power(sigma))
    recovered = herm_func(sym, lambda w: np.maximum(w, 0.0) ** (1.0 / sigma))
    return float(np.max(np.abs(recovered - frame.to_sym(sample.h_tilde))))


def _l1_norm(form: np.ndarray, metric: HermitianMetricField) -> float:
    density = np.sum(np.linalg.norm(form, axis=(-2, -1)), axis=-1)
    return float(metric.grid.integrate(density, metric.vol).real)


def projection_residuals(
    pi: np.ndarray, reference: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> Dict[str, float]:
    """Idempotency, H0-self-adjointness, weak holomorphy and Higgs invariance defects of pi."""
    complement = identity_field(bundle.grid.shape, bundle.rank) - pi
    zeros, ones = ddoubleprime(pi, reference, bundle)
    left = complement[..., None, :, :]
    weak_hol = _l1_norm(left @ zeros, metric) + _l1_norm(left @ ones, metric)
    invariance = left @ bundle.theta @ pi[..., None, :, :]
    return {
        "idempotent": float(np.max(np.abs(pi @ pi - pi))),
        "self_adjoint": float(np.max(np.abs(pi - metric_adjoint(pi, reference.H)))),
        "weak_hol": weak_hol,
        "higgs_invariance": _l1_norm(invariance, metric),
    }


def _snap(
    sample: BlowupSample, sigma: float, threshold: float
) -> Dict[str, Any]:
    frame = sample.state.frame
    values = 1.0 - sample.eigvals ** sigma
    keep = (values > threshold).astype(float)
    pi = frame.to_endo(assemble(frame.eigvecs, keep))
    return {
        "pi": pi,
        "gap": 2.0 * float(np.min(np.abs(values - threshold))),
        "rank": int(round(float(np.mean(np.sum(keep, axis=-1))))),
    }


def extract_projection(
    samples: Sequence[BlowupSample],
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    gap: float = 0.2,
    threshold: float = 0.5,
    gate: float = 1e-2,
) -> ProjectionCandidate:
    """Snap I - h~^sigma at the latest sample to a projection.

    The snapped rank at the latest sample must be the same for every sigma; otherwise
    the verdict is withheld. Sigmas are then tried from the smallest up. A sigma
    qualifies when its spectrum keeps a gap around ``threshold`` on every sample, the
    snapped rank agrees across samples and lies strictly between 0 and r, and the
    pre-snap residuals stay below ``gate``.
    """
    sigmas = sorted(next(iter(samples)).sigma_powers) if samples else []
    if len(samples) < 2 or len(sigmas) < 2:
        raise ValueError("need at least 2 sample times and 2 sigma values")
    samples = sorted(samples, key=lambda s: s.t)
    latest = samples[-1]
    reference = latest.state.reference()
    identity = identity_field(bundle.grid.shape, bundle.rank)

    per_sigma = []
    snapped = {}
    for sigma in sigmas:
        snaps = [_snap(sample, sigma, threshold) for sample in samples]
        pi_raw = identity - latest.power(sigma)
        snapped[sigma] = (snaps, pi_raw)
        per_sigma.append(
            {
                "sigma": sigma,
                "rank": snaps[-1]["rank"],
                "gap": min(s["gap"] for s in snaps),
                "residuals": projection_residuals(pi_raw, reference, bundle, metric),
            }
        )

    ranks = [record["rank"] for record in per_sigma]
    if len(set(ranks)) > 1:
        listed = ", ".join(f"sigma={r['sigma']}: {r['rank']}" for r in per_sigma)
        raise VerdictWithheld(f"snapped rank depends on sigma ({listed})", per_sigma)

    reasons = []
    for record in per_sigma:
        sigma, residuals = record["sigma"], record["residuals"]
        snaps, pi_raw = snapped[sigma]
        final = snaps[-1]
        if record["gap"] < gap:
            reasons.append(f"sigma={sigma}: no spectral gap")
            continue
        if len({s["rank"] for s in snaps}) != 1 or not 0 < final["rank"] < bundle.rank:
            reasons.append(f"sigma={sigma}: rank not a stable proper value")
            continue
        if any(residuals[name] > gate for name in RESIDUAL_GATES):
            reasons.append(f"sigma={sigma}: residuals above {gate:g}")
            continue
        return ProjectionCandidate(
            pi=final["pi"],
            pi_raw=pi_raw,
            sigma=sigma,
            t=latest.t,
            residuals=residuals,
            rank_estimate=final["rank"],
            spectral_gap=final["gap"],
            per_sigma=per_sigma,
        )
    raise VerdictWithheld("; ".join(reasons), per_sigma)


def destabilization_verdict(
    candidate: ProjectionCandidate,
    state0: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    slope_tol: float = 1e-6,
    gate: float = 1e-2,
) -> Dict[str, Any]:
    """Chern-Weil slope of the candidate against mu(E)."""
    if not 0 < candidate.rank_estimate < bundle.rank:
        raise ValueError(f"projection rank {candidate.rank_estimate} is not proper")
    failed = [name for name in RESIDUAL_GATES if candidate.residuals.get(name, np.inf) > gate]
    if failed:
        raise ValueError(f"projection residuals above {gate:g}: {', '.join(failed)}")

    grid = bundle.grid
    reference = state0.reference()
    mu_E = degree_slope(reference, bundle, metric)["mu"]
    mu_sub = chern_weil_slope(candidate.pi, reference, bundle, metric)
    shifted = contracted_curvature(reference, bundle, metric) - mu_E * np.eye(bundle.rank)
    return {
        "mu_sub": mu_sub,
        "mu_E": mu_E,
        "destabilizing": bool(mu_sub >= mu_E - slope_tol),
        "lhs": dprime_norm_sq(candidate.pi, reference, bundle, metric),
        "rhs": float(grid.integrate(trace(shifted @ candidate.pi), metric.vol).real),
    }


def dominated_convergence_series(
    samples: Sequence[BlowupSample], sigma: float, metric: HermitianMetricField
) -> Dict[str, np.ndarray]:
    """t, f = (1/sigma) int Tr(h~^sigma) vol and its time derivative."""
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    samples = sorted(samples, key=lambda s: s.t)
    t = np.array([s.t for s in samples])
    f = np.array(
        [metric.grid.integrate(trace(s.power(sigma)).real, metric.vol).real / sigma for s in samples]
    )
    return {"t": t, "f": f, "fdot": np.gradient(f, t)}


def fdot_decay(samples: Sequence[BlowupSample], sigma: float, metric: HermitianMetricField) -> float:
    """min |f'| over the later half of the samples divided by its minimum over the earlier half."""
    if len(samples) < 4:
        raise ValueError("need at least 4 samples")
    fdot = np.abs(dominated_convergence_series(samples, sigma, metric)["fdot"])
    half = len(fdot) // 2
    early = float(np.min(fdot[:half]))
    late = float(np.min(fdot[half:]))
    if early == 0:
        return 0.0 if late == 0 else np.inf
    return late / early
