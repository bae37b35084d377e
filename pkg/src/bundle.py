"""Higgs bundles on the lattice torus: curvature, Higgs adjoint, degree and Chern-Weil.

Split twisted bundles carry one integer twist per summand and complex axis. The
constant background curvature of summand a along complex axis j is
``c[a, j] = pi * twist[a, j] / (L_{2j} L_{2j+1})``, realized by the holomorphic-gauge
potential ``A0_j = -c conj(z^j)`` whose seam jumps are constant cocycles. The
evolving metric ``H`` is the periodic part of the bundle metric in that frame; it,
the Higgs field and every endomorphism stay block-diagonal over summands of equal
twist, where the background potential is central.

Index conventions follow geometry: (1,1) components are ``F[..., k, j] = F_{kbar j}``.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .formulas import evaluate_matrix, is_constant
from .geometry import HermitianMetricField, lambda_contract, solve_complex_laplacian
from .lattice import LatticeGrid, random_scalar_field
from .matfuncs import (
    RelativeFrame,
    commutator,
    identity_field,
    metric_adjoint,
    trace,
)


@dataclass(frozen=True, eq=False)
class HiggsBundleData:
    """Rank, twist and Higgs field ``theta[..., j, :, :] = theta_j``."""

    grid: LatticeGrid
    rank: int
    twist: np.ndarray
    theta: np.ndarray
    holomorphy_tol: float = 1e-10

    @property
    def is_trivial(self) -> bool:
        return not np.any(self.twist)

    @property
    def curvature_constants(self) -> np.ndarray:
        periods = self.grid.periods
        areas = np.array([periods[2 * j] * periods[2 * j + 1] for j in range(self.grid.complex_dim)])
        return np.pi * self.twist / areas

    @property
    def block_mask(self) -> np.ndarray:
        """True where two summands share a twist row."""
        return np.all(self.twist[:, None, :] == self.twist[None, :, :], axis=-1)

    @property
    def background_curvature(self) -> np.ndarray:
        n = self.grid.complex_dim
        c = self.curvature_constants
        out = np.zeros((n, n, self.rank, self.rank), dtype=complex)
        for j in range(n):
            out[j, j] = np.diag(c[:, j])
        return out


def build_bundle(grid: LatticeGrid, spec: Optional[Dict[str, Any]] = None) -> HiggsBundleData:
    """Build bundle data from a spec with ``rank``, ``twist``, ``theta`` and ``holomorphy_tol``."""
    spec = spec or {}
    n = grid.complex_dim
    rank = int(spec.get("rank", 1))
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")

    twist = spec.get("twist")
    twist = np.zeros((rank, n), dtype=int) if twist is None else np.asarray(twist, dtype=int)
    if twist.shape != (rank, n):
        raise ValueError(f"twist must be a {rank} x {n} integer matrix, got shape {twist.shape}")

    entries = spec.get("theta")
    if entries is None:
        theta = np.zeros(grid.shape + (n, rank, rank), dtype=complex)
        constant = True
    else:
        if len(entries) != n:
            raise ValueError(f"theta needs one {rank} x {rank} matrix per complex axis")
        coords = grid.coordinates()
        theta = np.stack([evaluate_matrix(m, coords) for m in entries], axis=-3)
        if theta.shape[-2:] != (rank, rank):
            raise ValueError(f"theta matrices must be {rank} x {rank}")
        constant = all(is_constant(e) for m in entries for row in m for e in row)

    tol = spec.get("holomorphy_tol")
    if tol is None:
        tol = 1e-10 if constant else 1e-8

    bundle = HiggsBundleData(grid=grid, rank=rank, twist=twist, theta=theta, holomorphy_tol=float(tol))
    if np.max(np.abs(theta * ~bundle.block_mask), initial=0.0) > 0:
        raise ValueError("Higgs field couples summands of different twist")

    residuals = higgs_residuals(bundle)
    for name, value in residuals.items():
        if value > bundle.holomorphy_tol:
            print(f"⚠️  Higgs {name} residual {value:.3e} exceeds {bundle.holomorphy_tol:.1e}")
    return bundle


def higgs_residuals(bundle: HiggsBundleData) -> Dict[str, float]:
    """Max-norms of dbar(theta) and theta ^ theta."""
    grid = bundle.grid
    n = grid.complex_dim
    holomorphy = max(
        float(np.max(np.abs(grid.partial_zbar(bundle.theta, k)))) for k in range(n)
    )
    integrability = 0.0
    if n == 2:
        integrability = float(
            np.max(np.abs(commutator(bundle.theta[..., 0, :, :], bundle.theta[..., 1, :, :])))
        )
    return {"holomorphy": holomorphy, "integrability": integrability}


def background_connection(bundle: HiggsBundleData) -> np.ndarray:
    """Non-periodic potential A0_j = diag(-c_j conj(z^j)) sampled on the lattice."""
    grid = bundle.grid
    coords = grid.coordinates()
    c = bundle.curvature_constants
    out = np.zeros(grid.shape + (grid.complex_dim, bundle.rank, bundle.rank), dtype=complex)
    for j in range(grid.complex_dim):
        zbar = coords[2 * j] - 1j * coords[2 * j + 1]
        for a in range(bundle.rank):
            out[..., j, a, a] = -c[a, j] * zbar
    return out


def twist_cocycles(bundle: HiggsBundleData) -> Dict[int, np.ndarray]:
    """Constant jump of the background potential across each periodic seam."""
    c = bundle.curvature_constants
    cocycles = {}
    for axis, period in enumerate(bundle.grid.periods):
        j = axis // 2
        factor = -period if axis % 2 == 0 else 1j * period
        cocycles[axis] = np.diag(factor * c[:, j]).astype(complex)
    return cocycles


def twist_consistency_residual(bundle: HiggsBundleData) -> float:
    """Background curvature and seam jumps recovered from the sampled potential."""
    grid = bundle.grid
    n = grid.complex_dim
    a0 = background_connection(bundle)
    cocycles = twist_cocycles(bundle)
    slopes = []
    worst = 0.0
    for axis in grid.axes:
        h = grid.spacing[axis]
        steps = np.diff(a0, axis=axis) / h
        slope = steps.reshape(-1, n, bundle.rank, bundle.rank)[0]
        worst = max(worst, float(np.max(np.abs(steps - slope))))
        slopes.append(slope)
        seam = slope[axis // 2] * grid.periods[axis]
        worst = max(worst, float(np.max(np.abs(seam - cocycles[axis]))))
    curvature = np.empty((n, n, bundle.rank, bundle.rank), dtype=complex)
    for k in range(n):
        curvature[k] = -0.5 * (slopes[2 * k] + 1j * slopes[2 * k + 1])
    worst = max(worst, float(np.max(np.abs(curvature - bundle.background_curvature))))
    for a in cocycles.values():
        for b in cocycles.values():
            worst = max(worst, float(np.max(np.abs(commutator(a, b)))))
    return worst


@dataclass(eq=False)
class BundleMetricState:
    """Bundle metric H at time t together with the fixed reference metric H0."""

    H: np.ndarray
    H0: np.ndarray
    t: float = 0.0
    step: int = 0
    cache: Dict[Any, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def identity(cls, grid: LatticeGrid, rank: int) -> "BundleMetricState":
        eye = identity_field(grid.shape, rank)
        return cls(H=eye, H0=eye.copy())

    @property
    def frame(self) -> RelativeFrame:
        if "frame" not in self.cache:
            self.cache["frame"] = RelativeFrame.from_metrics(self.H0, self.H)
        return self.cache["frame"]

    @property
    def h(self) -> np.ndarray:
        return self.frame.h

    @property
    def s(self) -> np.ndarray:
        return self.frame.log

    def reference(self) -> "BundleMetricState":
        return BundleMetricState(H=self.H0, H0=self.H0, t=self.t, step=self.step)

    def advance(self, H: np.ndarray, dt: float) -> "BundleMetricState":
        return BundleMetricState(H=H, H0=self.H0, t=self.t + dt, step=self.step + 1)


def _check_positive(state: BundleMetricState) -> None:
    if not state.frame.is_positive:
        raise ValueError("bundle metric H is not positive definite")


def connection(state: BundleMetricState, bundle: HiggsBundleData) -> np.ndarray:
    """Periodic part A_j = H^{-1} d_j H of the Chern connection."""
    if "connection" not in state.cache:
        grid = bundle.grid
        dH = np.stack([grid.partial_z(state.H, j) for j in range(grid.complex_dim)], axis=-3)
        state.cache["connection"] = np.linalg.solve(state.H[..., None, :, :], dH)
    return state.cache["connection"]


def higgs_adjoint(theta: np.ndarray, H: np.ndarray) -> np.ndarray:
    """theta^dagger_k = H^{-1} theta_k^* H for every axis k."""
    return metric_adjoint(theta, H[..., None, :, :])


def _adjoint(state: BundleMetricState, bundle: HiggsBundleData) -> np.ndarray:
    if "adjoint" not in state.cache:
        state.cache["adjoint"] = higgs_adjoint(bundle.theta, state.H)
    return state.cache["adjoint"]


def chern_curvature(
    state: BundleMetricState, bundle: HiggsBundleData, metric: Optional[HermitianMetricField] = None
) -> np.ndarray:
    """F_{kbar j} = -dbar_k(H^{-1} d_j H) plus the background curvature."""
    if "curvature" not in state.cache:
        _check_positive(state)
        grid = bundle.grid
        A = connection(state, bundle)
        dbar_A = np.stack([grid.partial_zbar(A, k) for k in range(grid.complex_dim)], axis=-4)
        state.cache["curvature"] = -dbar_A + bundle.background_curvature
    return state.cache["curvature"]


def higgs_curvature(state: BundleMetricState, bundle: HiggsBundleData) -> np.ndarray:
    """(1,1) part of F_theta: F_{kbar j} + [theta_j, theta^dagger_k]."""
    F = chern_curvature(state, bundle)
    theta = bundle.theta[..., None, :, :, :]
    adjoint = _adjoint(state, bundle)[..., :, None, :, :]
    return F + commutator(theta, adjoint)


def contracted_curvature(
    state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> np.ndarray:
    """Lambda F_theta = Lambda F - g^{j kbar} [theta^dagger_k, theta_j]."""
    key = ("lambda_F", id(metric))
    if key not in state.cache:
        state.cache[key] = lambda_contract(higgs_curvature(state, bundle), metric)
    return state.cache[key]


def degree_slope(
    state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> Dict[str, float]:
    """Raw degree int Tr(Lambda F_theta) vol and slope deg / rank."""
    grid = bundle.grid
    total = grid.integrate(trace(contracted_curvature(state, bundle, metric)), metric.vol)
    if abs(total.imag) > 1e-9 * max(1.0, abs(total.real)):
        raise ValueError(f"degree has imaginary part {total.imag:.3e}; bundle data inconsistent")
    deg = float(total.real)
    return {"deg": deg, "mu": deg / bundle.rank}


def trace_condition_residual(
    state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> float:
    """Max-norm of Tr(Lambda F_theta - mu I)."""
    mu = degree_slope(state, bundle, metric)["mu"]
    tr = trace(contracted_curvature(state, bundle, metric))
    return float(np.max(np.abs(tr - bundle.rank * mu)))


def det_gauge_potential(
    K: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> np.ndarray:
    """Zero-mean phi with Delta phi = Tr(Lambda F_theta(K) - mu I) / r."""
    mu = degree_slope(K, bundle, metric)["mu"]
    rho = (trace(contracted_curvature(K, bundle, metric)) - bundle.rank * mu).real / bundle.rank
    return solve_complex_laplacian(metric, rho)


def det_gauge_initial_metric(
    K: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> BundleMetricState:
    """Initial metric H0 = e^phi K satisfying the trace condition."""
    phi = det_gauge_potential(K, bundle, metric)
    H0 = np.exp(phi)[..., None, None] * K.H
    return BundleMetricState(H=H0, H0=H0.copy())


def covariant_derivative(
    phi: np.ndarray, state: BundleMetricState, bundle: HiggsBundleData, j: int
) -> np.ndarray:
    A = connection(state, bundle)[..., j, :, :]
    return bundle.grid.partial_z(phi, j) + commutator(A, phi)


def dprime(
    phi: np.ndarray, state: BundleMetricState, bundle: HiggsBundleData
) -> Tuple[np.ndarray, np.ndarray]:
    """D'phi split into (1,0) part nabla_j phi and (0,1) part [theta^dagger_k, phi]."""
    n = bundle.grid.complex_dim
    ones = np.stack([covariant_derivative(phi, state, bundle, j) for j in range(n)], axis=-3)
    zeros = commutator(_adjoint(state, bundle), phi[..., None, :, :])
    return ones, zeros


def ddoubleprime(
    phi: np.ndarray, state: BundleMetricState, bundle: HiggsBundleData
) -> Tuple[np.ndarray, np.ndarray]:
    """D''phi split into (0,1) part dbar_k phi and (1,0) part [theta_j, phi]."""
    grid = bundle.grid
    zeros = np.stack([grid.partial_zbar(phi, k) for k in range(grid.complex_dim)], axis=-3)
    ones = commutator(bundle.theta, phi[..., None, :, :])
    return zeros, ones


def laplacian_D(
    phi: np.ndarray, state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> np.ndarray:
    """g^{j kbar} D''_kbar D'_j phi = g^{j kbar}(dbar_k nabla_j phi - [theta_j, [theta^dagger_k, phi]])."""
    grid = bundle.grid
    nabla, inner = dprime(phi, state, bundle)
    dbar_nabla = np.stack([grid.partial_zbar(nabla, k) for k in range(grid.complex_dim)], axis=-4)
    first = np.einsum("...jk,...kjab->...ab", metric.g_inv, dbar_nabla)
    outer = commutator(bundle.theta[..., :, None, :, :], inner[..., None, :, :, :])
    second = np.einsum("...jk,...jkab->...ab", metric.g_inv, outer)
    return first - second


def endo_form_norm_density(
    ones: np.ndarray, zeros: np.ndarray, H: np.ndarray, metric: HermitianMetricField
) -> np.ndarray:
    """Pointwise |.|^2 of an End-valued 1-form with (1,0) part ``ones`` and (0,1) part ``zeros``."""
    Hb = H[..., None, :, :]
    ones_pair = np.einsum("...jab,...kba->...jk", ones, metric_adjoint(ones, Hb))
    zeros_pair = np.einsum("...jab,...kba->...jk", zeros, metric_adjoint(zeros, Hb))
    total = np.einsum("...jk,...jk->...", metric.g_inv, ones_pair)
    total = total + np.einsum("...kj,...jk->...", metric.g_inv, zeros_pair)
    return total.real


def dprime_norm_sq(
    phi: np.ndarray, state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> float:
    """||D'phi||^2_{L^2} measured with the metric of ``state``."""
    density = endo_form_norm_density(*dprime(phi, state, bundle), state.H, metric)
    return float(bundle.grid.integrate(density, metric.vol).real)


def chern_weil_slope(
    pi: np.ndarray,
    state0: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    proper: bool = True,
) -> float:
    """Slope of the subobject cut out by the projection field pi.

    (int Tr(Lambda F_theta pi) vol - ||D'pi||^2) / rk, measured at ``state0``.
    With ``proper=False`` the identity is admitted and returns mu(E).
    """
    grid = bundle.grid
    rk = int(round(float(grid.mean(trace(pi)).real)))
    if rk <= 0 or (proper and rk >= bundle.rank):
        raise ValueError(f"projection rank {rk} is not a proper subobject of rank {bundle.rank}")
    curvature = contracted_curvature(state0, bundle, metric)
    total = grid.integrate(trace(curvature @ pi), metric.vol).real
    return (total - dprime_norm_sq(pi, state0, bundle, metric)) / rk


def _wedge(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Top-form density of two (1,1)-forms on a complex surface."""
    return (
        p[..., 0, 0, :, :] @ q[..., 1, 1, :, :]
        + p[..., 1, 1, :, :] @ q[..., 0, 0, :, :]
        - p[..., 0, 1, :, :] @ q[..., 1, 0, :, :]
        - p[..., 1, 0, :, :] @ q[..., 0, 1, :, :]
    )


def chern_numbers(
    state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> Dict[str, float]:
    """Raw c1^2, c2 and the Bogomolov-Gieseker combination 2r c2 - (r-1) c1^2."""
    grid = bundle.grid
    if grid.complex_dim != 2:
        raise ValueError("Chern numbers need complex dimension 2")
    F = chern_curvature(state, bundle)
    flat = np.ones(grid.shape)
    tr = trace(F)[..., None, None]
    c1_sq = grid.integrate(_wedge(tr, tr)[..., 0, 0], flat).real
    second = grid.integrate(trace(_wedge(F, F)), flat).real
    c2 = 0.5 * (c1_sq - second)
    r = bundle.rank
    return {"c1_sq": c1_sq, "c2": c2, "bg_integrand": 2 * r * c2 - (r - 1) * c1_sq}


def curvature_lp_norm(
    state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField, p: float = 2.0
) -> float:
    """||F_theta||_{L^p} with the coordinate Frobenius norm on (1,1) components."""
    density = np.sqrt(np.sum(np.abs(higgs_curvature(state, bundle)) ** 2, axis=(-4, -3, -2, -1)))
    return float(bundle.grid.integrate(density ** p, metric.vol).real ** (1.0 / p))


def curvature_difference_residual(
    state: BundleMetricState, bundle: HiggsBundleData, metric: Optional[HermitianMetricField] = None
) -> float:
    """Relative mismatch of F_theta(H) - F_theta(H0) against D''(h^{-1} D'_0 h)."""
    grid = bundle.grid
    n = grid.complex_dim
    reference = state.reference()
    lhs = higgs_curvature(state, bundle) - higgs_curvature(reference, bundle)

    h = state.h
    h_inv = np.linalg.inv(h)
    nabla, inner = dprime(h, reference, bundle)
    carried = h_inv[..., None, :, :] @ nabla
    first = -np.stack([grid.partial_zbar(carried, k) for k in range(n)], axis=-4)
    twisted = h_inv[..., None, :, :] @ inner
    second = commutator(bundle.theta[..., None, :, :, :], twisted[..., :, None, :, :])
    rhs = first + second
    scale = float(np.max(np.abs(lhs)))
    if scale < 1e-300:
        return float(np.max(np.abs(rhs)))
    return float(np.max(np.abs(lhs - rhs))) / scale


def section_curvature_residual(
    state: BundleMetricState, bundle: HiggsBundleData, sections: Sequence[np.ndarray]
) -> float:
    """Relative mismatch of (D'D'' + D''D')s against F_theta s on trivial bundles."""
    if not bundle.is_trivial:
        raise ValueError("section identity is checked on trivial bundles only")
    grid = bundle.grid
    n = grid.complex_dim
    A = connection(state, bundle)
    theta = bundle.theta
    adjoint = _adjoint(state, bundle)
    F_theta = higgs_curvature(state, bundle)

    def apply(m: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.einsum("...ab,...b->...a", m, v)

    worst = 0.0
    for s in sections:
        dbar_s = np.stack([grid.partial_zbar(s, k) for k in range(n)], axis=-2)
        nabla_s = np.stack(
            [grid.partial_z(s, j) + apply(A[..., j, :, :], s) for j in range(n)], axis=-2
        )
        lhs = np.empty(grid.shape + (n, n, bundle.rank), dtype=complex)
        for k in range(n):
            for j in range(n):
                nabla_dbar = grid.partial_z(dbar_s[..., k, :], j) + apply(A[..., j, :, :], dbar_s[..., k, :])
                dbar_nabla = grid.partial_zbar(nabla_s[..., j, :], k)
                mixed = apply(theta[..., j, :, :], apply(adjoint[..., k, :, :], s)) - apply(
                    adjoint[..., k, :, :], apply(theta[..., j, :, :], s)
                )
                lhs[..., k, j, :] = nabla_dbar - dbar_nabla + mixed
        rhs = np.einsum("...kjab,...b->...kja", F_theta, s)
        scale = max(float(np.max(np.abs(rhs))), 1e-300)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
    return worst


def c0_proxy(
    state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> float:
    """sup |D'_0 h h^{-1}| measured with H0."""
    reference = state.reference()
    h = state.h
    h_inv = np.linalg.inv(h)
    ones, zeros = dprime(h, reference, bundle)
    density = endo_form_norm_density(
        ones @ h_inv[..., None, :, :], zeros @ h_inv[..., None, :, :], state.H0, metric
    )
    return float(np.sqrt(np.max(np.maximum(density, 0.0))))


def random_sections(
    grid: LatticeGrid, rank: int, rng: np.random.Generator, count: int, max_mode: int = 1
) -> List[np.ndarray]:
    return [
        np.stack([random_scalar_field(grid, rng, max_mode=max_mode, real=False) for _ in range(rank)], axis=-1)
        for _ in range(count)
    ]
