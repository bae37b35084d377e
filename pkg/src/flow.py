"""Donaldson heat flow on bundle metrics and its variational identities.

The flow h^{-1} dh/dt = -(Lambda F_theta - mu I) is stepped as
H <- H^{1/2} exp(-dt H^{-1/2} K H^{-1/2}) H^{1/2} with K = H (Lambda F_theta - mu I)
Hermitian, so every step keeps H positive and conserves det h whenever the
velocity is traceless.
"""

from collections import deque
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .bundle import (
    BundleMetricState,
    HiggsBundleData,
    c0_proxy,
    contracted_curvature,
    covariant_derivative,
    degree_slope,
    dprime_norm_sq,
    laplacian_D,
    trace_condition_residual,
)
from .geometry import HermitianMetricField
from .matfuncs import assemble, hermitize, herm_exp, metric_adjoint, trace

COLUMNS = (
    "t",
    "Y",
    "M",
    "sup_LF",
    "logdet_max",
    "eigmin",
    "eigmax",
    "Dprime_norm",
    "trace_h_sup",
)
EXTRA_COLUMNS = ("deg", "c0_proxy")
SCHEMES = ("euler", "midpoint")


class FlowAbort(RuntimeError):
    """A flow step produced non-finite values or lost positivity after all retries."""


@dataclass
class FlowConfig:
    dt: Optional[float] = None
    max_steps: int = 1000
    stop_Y: Optional[float] = None
    renormalize_det: bool = False
    functional_quadrature_nodes: int = 8
    scheme: str = "euler"
    record_every: int = 1
    record_functional: bool = True
    blowup_threshold: Optional[float] = None
    max_halvings: int = 5
    sup_slack: float = 1e-6
    snapshot_every: int = 0
    keep_snapshots: int = 8
    progress: bool = True

    def __post_init__(self):
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.functional_quadrature_nodes < 8:
            raise ValueError("functional_quadrature_nodes must be >= 8")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "FlowConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


@dataclass
class FlowDiagnostics:
    """Recorded rows of a flow run plus its final status and state snapshots."""

    rows: List[Dict[str, float]] = field(default_factory=list)
    status: str = "running"
    mu: float = 0.0
    dt: float = 0.0
    snapshots: Deque[BundleMetricState] = field(default_factory=deque)

    def record(self, row: Dict[str, float]) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def final(self) -> Dict[str, float]:
        return self.rows[-1]


def _column(series: Any, name: str) -> np.ndarray:
    if hasattr(series, "column"):
        return series.column(name)
    return np.asarray(series[name], dtype=float)


def velocity(
    state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField, mu: float
) -> np.ndarray:
    """Lambda F_theta - mu I."""
    L = contracted_curvature(state, bundle, metric)
    return L - mu * np.eye(bundle.rank)


def pointwise_norm(endo: np.ndarray, H: np.ndarray) -> np.ndarray:
    """|e|_H = sqrt(Tr(e e^{dagger_H}))."""
    return np.sqrt(np.maximum(trace(endo @ metric_adjoint(endo, H)).real, 0.0))


def sup_contracted(
    state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> float:
    return float(np.max(pointwise_norm(contracted_curvature(state, bundle, metric), state.H)))


def functional_gap(
    state: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField, mu: float
) -> float:
    """Y = ||Lambda F_theta - mu I||^2_{L^2}."""
    X = velocity(state, bundle, metric, mu)
    density = trace(X @ metric_adjoint(X, state.H)).real
    return float(bundle.grid.integrate(density, metric.vol).real)


def _exponential_update(H: np.ndarray, K: np.ndarray, dt: float) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(H))
    if not np.all(np.isfinite(w)) or np.min(w) <= 0:
        raise FlowAbort("bundle metric lost positivity")
    root = assemble(v, np.sqrt(w))
    root_inv = assemble(v, 1.0 / np.sqrt(w))
    return hermitize(root @ herm_exp(-dt * (root_inv @ K @ root_inv)) @ root)


def flow_step(
    state: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    dt: float,
    mu: Optional[float] = None,
    scheme: str = "euler",
    renormalize_det: bool = False,
) -> BundleMetricState:
    """One exponential step of h^{-1} dh/dt = -(Lambda F_theta - mu I)."""
    if mu is None:
        mu = degree_slope(state, bundle, metric)["mu"]
    H = state.H
    if scheme == "euler":
        K = hermitize(H @ velocity(state, bundle, metric, mu))
    elif scheme == "midpoint":
        K_start = hermitize(H @ velocity(state, bundle, metric, mu))
        half = state.advance(_exponential_update(H, K_start, 0.5 * dt), 0.5 * dt)
        K = hermitize(H @ velocity(half, bundle, metric, mu))
    else:
        raise ValueError(f"unknown scheme: {scheme}")

    H_new = _exponential_update(H, K, dt)
    if renormalize_det:
        det_h = (np.linalg.det(H_new) / np.linalg.det(state.H0)).real
        if np.min(det_h) <= 0:
            raise FlowAbort("det h lost positivity")
        H_new = H_new / det_h[..., None, None] ** (1.0 / bundle.rank)

    if not np.all(np.isfinite(H_new)):
        raise FlowAbort(f"non-finite metric after step at t={state.t:.6g}")
    new_state = state.advance(H_new, dt)
    if not new_state.frame.is_positive:
        raise FlowAbort(f"bundle metric lost positivity at t={new_state.t:.6g}")
    return new_state


def donaldson_functional(
    state: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    nodes: int = 8,
    mu: Optional[float] = None,
) -> float:
    """M = int_0^1 int Tr(Lambda F_{theta,u} s) vol du - mu int log det h vol along H0 e^{us}."""
    grid = bundle.grid
    if mu is None:
        mu = degree_slope(state.reference(), bundle, metric)["mu"]
    frame = state.frame
    s = frame.log
    x, w = np.polynomial.legendre.leggauss(nodes)
    total = 0.0 + 0.0j
    for u, weight in zip(0.5 * (x + 1.0), 0.5 * w):
        path = BundleMetricState(H=frame.metric_power(u), H0=state.H0)
        L = contracted_curvature(path, bundle, metric)
        total += weight * grid.integrate(trace(L @ s), metric.vol)
    total -= mu * grid.integrate(trace(s), metric.vol)
    if abs(total.imag) > 1e-8 * max(1.0, abs(total.real)):
        raise ValueError(f"Donaldson functional has imaginary part {total.imag:.3e}")
    return float(total.real)


def lambda_F_evolution_check(
    state: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    dt: float,
    mu: Optional[float] = None,
) -> float:
    """Relative mismatch between the finite-difference rate of Lambda F_theta and Delta_D."""
    if mu is None:
        mu = degree_slope(state, bundle, metric)["mu"]
    before = contracted_curvature(state, bundle, metric)
    after = contracted_curvature(flow_step(state, bundle, metric, dt, mu), bundle, metric)
    rate = (after - before) / dt
    expected = laplacian_D(before, state, bundle, metric)
    scale = float(np.max(np.abs(expected)))
    if scale < 1e-14 and float(np.max(np.abs(rate))) < 1e-14:
        return 0.0
    return float(np.max(np.abs(rate - expected))) / max(scale, 1e-300)


def gauduchon_M_derivative_check(
    state: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    dt: float,
    nodes: int = 8,
    mu: Optional[float] = None,
) -> Dict[str, float]:
    """Finite-difference dM/dt against -Y plus the path boundary term.

    The boundary term is int_0^1 int b_u vol du with
    b_u = -g^{j kbar}(dbar_k Tr(s nabla^u_j zeta_u) + d_j Tr(s dbar_k zeta_u)) and
    zeta_u = h_u^{-1} dh_u/dt along h_u = e^{us}.
    """
    grid = bundle.grid
    n = grid.complex_dim
    if mu is None:
        mu = degree_slope(state.reference(), bundle, metric)["mu"]

    before = donaldson_functional(state, bundle, metric, nodes, mu)
    after = donaldson_functional(flow_step(state, bundle, metric, dt, mu), bundle, metric, nodes, mu)
    lhs = (after - before) / dt

    X = velocity(state, bundle, metric, mu)
    frame = state.frame
    s = frame.log
    sym_rate = frame.root_inv @ hermitize(state.H @ (-X)) @ frame.root_inv

    x, w = np.polynomial.legendre.leggauss(nodes)
    boundary = 0.0 + 0.0j
    for u, weight in zip(0.5 * (x + 1.0), 0.5 * w):
        path = BundleMetricState(H=frame.metric_power(u), H0=state.H0)
        zeta = frame.root_inv @ frame.sym_function(lambda v: v ** (-u)) @ frame.frechet_power(sym_rate, u) @ frame.root
        b = np.zeros(grid.shape, dtype=complex)
        for j in range(n):
            alpha = trace(s @ covariant_derivative(zeta, path, bundle, j))
            for k in range(n):
                gamma = trace(s @ grid.partial_zbar(zeta, k))
                b -= metric.g_inv[..., j, k] * (grid.partial_zbar(alpha, k) + grid.partial_z(gamma, j))
        boundary += weight * grid.integrate(b, metric.vol)

    rhs = -functional_gap(state, bundle, metric, mu) + boundary.real
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "boundary": float(boundary.real),
        "discrepancy": abs(lhs - rhs) / scale,
    }


def Y_derivative_identity_check(series: Any, atol: float = 1e-10) -> float:
    """max over interior rows of |dY/dt + 2 ||D' Lambda F_theta||^2| / max(|dY/dt|, 2 ||D' Lambda F_theta||^2).

    Rows where both sides are below ``atol * max(Y, 1)`` count as exact.
    """
    t = _column(series, "t")
    Y = _column(series, "Y")
    D = _column(series, "Dprime_norm")
    if len(t) < 3:
        raise ValueError("series too short: need at least 3 recorded steps")
    rate = np.gradient(Y, t)[1:-1]
    drain = 2.0 * D[1:-1]
    scale = np.maximum(np.abs(rate), np.abs(drain))
    floor = atol * np.maximum(Y[1:-1], 1.0)
    live = scale > floor
    if not np.any(live):
        return 0.0
    return float(np.max(np.abs(rate + drain)[live] / scale[live]))


def monotonicity_violation(series: Any, column: str) -> float:
    """Largest increase between consecutive rows (0 when non-increasing)."""
    values = _column(series, column)
    values = values[np.isfinite(values)]
    if len(values) < 2:
        return 0.0
    return max(0.0, float(np.max(np.diff(values))))


def convexity_violation(series: Any, column: str = "M") -> float:
    """Largest negative second difference of a column."""
    values = _column(series, column)
    values = values[np.isfinite(values)]
    if len(values) < 3:
        return 0.0
    return max(0.0, -float(np.min(np.diff(values, n=2))))


def M_convexity_check(series: Any) -> float:
    """Convexity defect of M(t); zero up to round-off on semi-Kaehler runs."""
    return convexity_violation(series, "M")


def c0_proxy_check(series: Any) -> float:
    """Ratio of the overall sup of the C0 proxy to its sup over the first tenth of the rows."""
    values = _column(series, "c0_proxy")
    head = max(1, len(values) // 10)
    early = float(np.max(values[:head]))
    if early == 0:
        return 0.0 if float(np.max(values)) == 0 else np.inf
    return float(np.max(values)) / early


def log_accumulation_residual(
    state: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    dt: float,
    steps: int,
    mu: Optional[float] = None,
) -> float:
    """Max mismatch between log h after stepping and the summed velocities."""
    if mu is None:
        mu = degree_slope(state, bundle, metric)["mu"]
    accumulated = state.s
    current = state
    for _ in range(steps):
        accumulated = accumulated - dt * velocity(current, bundle, metric, mu)
        current = flow_step(current, bundle, metric, dt, mu)
    return float(np.max(np.abs(current.s - accumulated)))


def diagnostics_row(
    state: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    mu: float,
    nodes: int = 8,
    with_functional: bool = True,
) -> Dict[str, float]:
    grid = bundle.grid
    eig = state.frame.eigvals
    X = velocity(state, bundle, metric, mu)
    L = contracted_curvature(state, bundle, metric)
    deg = grid.integrate(trace(L), metric.vol).real
    return {
        "t": float(state.t),
        "Y": functional_gap(state, bundle, metric, mu),
        "M": donaldson_functional(state, bundle, metric, nodes, mu) if with_functional else float("nan"),
        "sup_LF": sup_contracted(state, bundle, metric),
        "logdet_max": float(np.max(np.abs(np.sum(np.log(eig), axis=-1)))),
        "eigmin": float(np.min(eig)),
        "eigmax": float(np.max(eig)),
        "Dprime_norm": dprime_norm_sq(X, state, bundle, metric),
        "trace_h_sup": float(np.max(np.sum(eig, axis=-1))),
        "deg": float(deg),
        "c0_proxy": c0_proxy(state, bundle, metric),
    }


def default_time_step(
    state0: BundleMetricState, bundle: HiggsBundleData, metric: HermitianMetricField
) -> float:
    return 1e-3 / (1.0 + sup_contracted(state0.reference(), bundle, metric))


def _stiff_mode_rate(metric: HermitianMetricField, dt: float) -> float:
    grid = metric.grid
    k_max = max(np.max(np.abs(grid.wavenumbers(a))) for a in grid.axes)
    g_inv_max = float(np.max(np.linalg.eigvalsh(metric.g_inv)))
    return dt * grid.complex_dim * g_inv_max * k_max ** 2 / 2.0


def _guarded_step(
    state: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    config: FlowConfig,
    mu: float,
    dt: float,
) -> Tuple[BundleMetricState, float]:
    sup_now = sup_contracted(state, bundle, metric)
    failure = ""
    for attempt in range(config.max_halvings + 1):
        try:
            candidate = flow_step(
                state, bundle, metric, dt, mu, config.scheme, config.renormalize_det
            )
        except FlowAbort as e:
            failure = str(e)
        else:
            growth = sup_contracted(candidate, bundle, metric) - sup_now
            if growth <= config.sup_slack:
                return candidate, dt
            failure = f"sup|Lambda F_theta| grew by {growth:.3e}"
        if attempt == config.max_halvings:
            break
        dt = 0.5 * dt
        print(f"⚠️  {failure}; halving dt to {dt:.3e}")
    raise FlowAbort(
        f"flow step failed at t={state.t:.6g} after {config.max_halvings} halvings: {failure}"
    )


def run_flow(
    state0: BundleMetricState,
    bundle: HiggsBundleData,
    metric: HermitianMetricField,
    config: FlowConfig,
    mu: Optional[float] = None,
    on_record: Optional[Callable[[Dict[str, float]], None]] = None,
) -> Tuple[BundleMetricState, FlowDiagnostics]:
    """Step the flow until Y <= stop_Y, the trace of h blows up, or max_steps.

    Status ends as ``converged``, ``diverged`` or ``max_steps``; a step that keeps
    failing after all dt halvings raises FlowAbort.
    """
    grid = bundle.grid
    if mu is None:
        mu = degree_slope(state0.reference(), bundle, metric)["mu"]

    residual = trace_condition_residual(state0.reference(), bundle, metric)
    if residual > 1e-6:
        print(f"⚠️  Initial metric is not det-gauged (trace residual {residual:.3e})")

    sup_hat = sup_contracted(state0.reference(), bundle, metric)
    dt = config.dt if config.dt is not None else default_time_step(state0, bundle, metric)
    if dt * (sup_hat + abs(mu)) >= 0.5:
        raise ValueError(
            f"dt={dt:.3e} violates dt*(sup|Lambda F_theta| + |mu|) < 0.5 (value {dt * (sup_hat + abs(mu)):.3f})"
        )
    if _stiff_mode_rate(metric, dt) >= 2.0:
        print(f"⚠️  dt={dt:.3e} is explicitly unstable for the highest lattice modes")

    stop_Y = config.stop_Y
    if stop_Y is None:
        stop_Y = 1e-10 if grid.complex_dim == 1 else 1e-8
    threshold = config.blowup_threshold
    if threshold is None:
        threshold = 1e3 * bundle.rank

    diagnostics = FlowDiagnostics(mu=mu, dt=dt, snapshots=deque(maxlen=max(1, config.keep_snapshots)))
    nodes = config.functional_quadrature_nodes
    start = state0.step
    state = state0

    def record(current: BundleMetricState) -> Dict[str, float]:
        row = diagnostics_row(current, bundle, metric, mu, nodes, config.record_functional)
        diagnostics.record(row)
        if on_record is not None:
            on_record(row)
        return row

    with tqdm(total=config.max_steps, desc="🌀 Flow", disable=not config.progress) as bar:
        while True:
            taken = state.step - start
            if taken % config.record_every == 0:
                record(state)
            if config.snapshot_every and taken % config.snapshot_every == 0:
                diagnostics.snapshots.append(state)

            if functional_gap(state, bundle, metric, mu) <= stop_Y:
                diagnostics.status = "converged"
                break
            if float(np.max(np.sum(state.frame.eigvals, axis=-1))) >= threshold:
                diagnostics.status = "diverged"
                break
            if taken >= config.max_steps:
                diagnostics.status = "max_steps"
                break

            state, dt = _guarded_step(state, bundle, metric, config, mu, dt)
            bar.update(1)

    if not diagnostics.rows or diagnostics.rows[-1]["t"] != state.t:
        record(state)
    if not diagnostics.snapshots or diagnostics.snapshots[-1] is not state:
        diagnostics.snapshots.append(state)
    diagnostics.dt = dt
    return state, diagnostics
