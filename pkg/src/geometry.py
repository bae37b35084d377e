"""Base Hermitian metric, torsion, classification and Gauduchon gauge.

Conventions: ``g[..., k, j] = g_{kbar j}``, ``g_inv[..., j, k] = g^{j kbar}``,
``torsion[..., l, k, j] = T_{l kbar j}``. The volume density ``vol = det g`` is the
coefficient of omega^n / n! against the flat coordinate measure, so the flat metric
has ``vol = 1``.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .formulas import evaluate_matrix
from .lattice import LatticeGrid, random_scalar_field
from .matfuncs import hermitize


@dataclass(frozen=True, eq=False)
class HermitianMetricField:
    """Hermitian metric g on the torus with derived inverse, volume and torsion."""

    grid: LatticeGrid
    g: np.ndarray
    g_inv: np.ndarray
    vol: np.ndarray
    torsion: np.ndarray
    torsion_trace: np.ndarray

    @classmethod
    def from_matrix(
        cls, grid: LatticeGrid, g: np.ndarray, normalize: bool = True
    ) -> "HermitianMetricField":
        n = grid.complex_dim
        g = np.asarray(g, dtype=complex)
        if g.shape != grid.shape + (n, n):
            raise ValueError(f"metric field must have shape {grid.shape + (n, n)}, got {g.shape}")
        g = hermitize(g)
        lowest = float(np.min(np.linalg.eigvalsh(g)))
        if lowest <= 0:
            raise ValueError(f"metric loses positivity (min eigenvalue {lowest:.3e})")
        vol = np.linalg.det(g).real
        if normalize:
            total = grid.integrate(np.ones(grid.shape), vol).real
            g = g / total ** (1.0 / n)
            vol = vol / total
        g_inv = np.linalg.inv(g)
        dg = np.stack([grid.partial_z(g, l) for l in range(n)], axis=-3)
        torsion = dg - np.swapaxes(dg, -1, -3)
        trace = np.einsum("...pk,...jkp->...j", g_inv, torsion)
        return cls(grid=grid, g=g, g_inv=g_inv, vol=vol, torsion=torsion, torsion_trace=trace)

    @property
    def complex_dim(self) -> int:
        return self.grid.complex_dim

    @property
    def weight(self) -> np.ndarray:
        """Coefficients vol * g^{j kbar} of omega^{n-1} (the adjugate of g when n = 2)."""
        return self.vol[..., None, None] * self.g_inv

    @property
    def is_flat(self) -> bool:
        return bool(np.max(np.abs(self.g - self.grid.mean(self.g))) <= 1e-14)


def _mode_phase(
    grid: LatticeGrid, spec: Dict[str, Any], default: Optional[Sequence[int]] = None
) -> Tuple[np.ndarray, np.ndarray]:
    mode = spec.get("mode") or default or [1] + [0] * (grid.real_dim - 1)
    if len(mode) != grid.real_dim:
        raise ValueError(f"metric mode needs {grid.real_dim} integers, got {mode}")
    wave = np.array([2 * np.pi * m / p for m, p in zip(mode, grid.periods)])
    coords = grid.coordinates()
    phase = sum(k * x for k, x in zip(wave, coords))
    return wave, phase


def build_metric(grid: LatticeGrid, spec: Optional[Dict[str, Any]] = None) -> HermitianMetricField:
    """Build a normalized metric from a spec dict.

    Kinds: ``flat``; ``kaehler_perturbed`` (g = I + ddbar phi with phi a single
    cosine mode whose eigenvalue dip equals the amplitude); ``nonkaehler``
    (g = diag(1, 1 + a cos(k.x)) in complex dimension 2, by default along x0 + x2,
    which no conformal factor makes Kaehler); ``entries`` (explicit
    n x n formula matrix, indexed [kbar][j]).
    """
    spec = spec or {}
    kind = spec.get("kind", "flat")
    n = grid.complex_dim
    eye = np.broadcast_to(np.eye(n, dtype=complex), grid.shape + (n, n))
    amplitude = float(spec.get("amplitude", 0.0))

    if kind == "flat":
        g = eye.copy()
    elif kind == "kaehler_perturbed":
        wave, phase = _mode_phase(grid, spec)
        eigen = float(np.sum(wave ** 2)) / 4.0
        if eigen == 0:
            raise ValueError("kaehler_perturbed needs a nonzero mode")
        potential = (amplitude / eigen) * np.cos(phase)
        g = eye + np.swapaxes(grid.complex_hessian(potential), -1, -2)
    elif kind == "nonkaehler":
        _, phase = _mode_phase(grid, spec, [1, 0] * n)
        profile = 1.0 + amplitude * np.cos(phase)
        g = eye.copy()
        g[..., n - 1, n - 1] = profile
    elif kind == "entries":
        entries = spec.get("entries")
        if entries is None or len(entries) != n:
            raise ValueError(f"entries metric needs an {n} x {n} formula matrix")
        g = evaluate_matrix(entries, grid.coordinates())
    else:
        raise ValueError(f"unknown metric kind: {kind}")

    return HermitianMetricField.from_matrix(grid, g, normalize=True)


def lambda_contract(psi: np.ndarray, metric: HermitianMetricField) -> np.ndarray:
    """Contraction g^{l mbar} psi_{mbar l} of a (1,1)-form field ``psi[..., m, l, ...]``."""
    grid = metric.grid
    n = grid.complex_dim
    nd = grid.real_dim
    psi = np.asarray(psi)
    if psi.shape[:nd] != grid.shape or psi.shape[nd : nd + 2] != (n, n):
        raise ValueError(
            f"(1,1)-form must have shape {grid.shape + (n, n)} + components, got {psi.shape}"
        )
    rest = psi.shape[nd + 2 :]
    flat = psi.reshape(psi.shape[: nd + 2] + (-1,))
    out = np.einsum("...lm,...mlp->...p", metric.g_inv, flat)
    return out.reshape(grid.shape + rest)


def complex_laplacian(metric: HermitianMetricField, phi: np.ndarray) -> np.ndarray:
    """g^{j kbar} d_j dbar_k phi."""
    hess = metric.grid.complex_hessian(phi)
    return np.einsum("...jk,...jk->...", metric.g_inv, hess)


def ddbar_weight(metric: HermitianMetricField) -> np.ndarray:
    """sum d_j dbar_k (vol g^{j kbar}), the top coefficient of ddbar(omega^{n-1}) for n = 2."""
    return metric.grid.ddbar_divergence(metric.weight)


def classification_residuals(metric: HermitianMetricField) -> Dict[str, float]:
    """Max-norms of d(omega), d(omega^{n-1}) and ddbar(omega^{n-1})."""
    kaehler = float(np.max(np.abs(metric.torsion)))
    if metric.complex_dim == 1:
        return {"kaehler_res": kaehler, "semikaehler_res": 0.0, "gauduchon_res": 0.0}
    return {
        "kaehler_res": kaehler,
        "semikaehler_res": kaehler,
        "gauduchon_res": float(np.max(np.abs(ddbar_weight(metric)))),
    }


def _symbol_inverse(
    grid: LatticeGrid, coeff: np.ndarray, shift: float, singular: float = 1.0
) -> np.ndarray:
    n = grid.complex_dim
    symbol = np.zeros(grid.shape, dtype=complex)
    for j in range(n):
        for k in range(n):
            symbol = symbol + coeff[j, k] * grid.symbol_z(j) * grid.symbol_zbar(k)
    symbol = symbol.real + shift
    zero = symbol == 0
    symbol[zero] = 1.0
    inverse = 1.0 / symbol
    inverse[zero] = singular
    return inverse


def _unresolved_modes(grid: LatticeGrid) -> np.ndarray:
    """Nonconstant Fourier modes whose every index is 0 or Nyquist; no derivative sees them."""
    half = grid.points_per_axis // 2
    corner = np.ones(grid.shape, dtype=bool)
    for axis in grid.axes:
        shape = [1] * grid.real_dim
        shape[axis] = grid.points_per_axis
        index = np.arange(grid.points_per_axis).reshape(shape)
        corner = corner & ((index == 0) | (index == half))
    corner.flat[0] = False
    return corner


def gauduchon_gauge(
    metric: HermitianMetricField,
    tol: float = 1e-12,
    max_refine: int = 8,
) -> Tuple[np.ndarray, HermitianMetricField]:
    """Conformal factor u > 0 with ddbar(u omega^{n-1}) = 0 and the metric u g.

    The operator L u = Re sum d_j dbar_k (W^{j kbar} u) has zero-mean range, so its
    kernel is found from the bordered system L v + mean(v) = -L 1 with u = 1 + v.
    Modes no lattice derivative resolves are held fixed at zero. Each solve is a
    flat-preconditioned GMRES, repeated on the residual until max |L u| <= tol.
    """
    grid = metric.grid
    if grid.complex_dim == 1:
        return np.ones(grid.shape), metric

    weight = metric.weight
    size = grid.site_count
    shape = grid.shape
    resolved = ~_unresolved_modes(grid)
    if grid.dealias:
        resolved = resolved & grid._dealias_mask

    def operator(u: np.ndarray) -> np.ndarray:
        return grid.ddbar_divergence(weight * u[..., None, None]).real

    def bordered(x: np.ndarray) -> np.ndarray:
        v = x.reshape(shape)
        kept = np.fft.ifftn(np.fft.fftn(v) * resolved).real
        return (operator(kept) + grid.mean(v) + (v - kept)).ravel()

    inverse_symbol = _symbol_inverse(grid, grid.mean(weight), 0.0)

    def precondition(x: np.ndarray) -> np.ndarray:
        spectrum = np.fft.fftn(x.reshape(shape))
        return np.fft.ifftn(spectrum * inverse_symbol).real.ravel()

    system = LinearOperator((size, size), matvec=bordered, dtype=float)
    preconditioner = LinearOperator((size, size), matvec=precondition, dtype=float)

    u = np.ones(shape)
    target = tol * max(1.0, float(np.max(np.abs(operator(u)))))
    residual = np.inf
    for _ in range(max_refine):
        defect = operator(u)
        residual = float(np.max(np.abs(defect)))
        if residual <= target:
            break
        x, _info = gmres(
            system, -defect.ravel(), rtol=1e-13, atol=0.0, restart=60, maxiter=100,
            M=preconditioner,
        )
        u = u + np.fft.ifftn(np.fft.fftn(x.reshape(shape)) * resolved).real
        u = u / grid.mean(u)
    else:
        residual = float(np.max(np.abs(operator(u))))
    if residual > target:
        raise RuntimeError(f"Gauduchon gauge solve did not converge (residual {residual:.3e})")
    if np.min(u) <= 0:
        raise RuntimeError("Gauduchon conformal factor is not positive")

    gauged = HermitianMetricField.from_matrix(grid, u[..., None, None] * metric.g)
    return u, gauged


def solve_complex_laplacian(
    metric: HermitianMetricField, rho: np.ndarray, tol: float = 1e-12
) -> np.ndarray:
    """Zero-mean solution of g^{j kbar} d_j dbar_k phi = rho.

    Requires the compatibility integral of rho against vol to vanish, which holds for
    every rho in the range exactly when g is Gauduchon.
    """
    grid = metric.grid
    rho = np.asarray(rho)
    total = grid.integrate(rho, metric.vol)
    scale = max(1.0, grid.integrate(np.abs(rho), metric.vol).real)
    if abs(total) > 1e-8 * scale:
        raise ValueError(
            f"compatibility integral {abs(total):.3e} exceeds tolerance; "
            "the base metric is not Gauduchon or quadrature failed"
        )
    size = grid.site_count
    shape = grid.shape

    if metric.is_flat:
        inverse_symbol = _symbol_inverse(
            grid, metric.g_inv[(0,) * grid.real_dim], 0.0, singular=0.0
        )
        phi = np.fft.ifftn(np.fft.fftn(rho) * inverse_symbol)
    else:
        inverse_symbol = _symbol_inverse(grid, grid.mean(metric.g_inv), 0.0)
        inverse_symbol.flat[0] = 1.0

        def matvec(x: np.ndarray) -> np.ndarray:
            p = x.reshape(shape)
            return (complex_laplacian(metric, p) + grid.mean(p)).ravel()

        def precondition(x: np.ndarray) -> np.ndarray:
            return np.fft.ifftn(np.fft.fftn(x.reshape(shape)) * inverse_symbol).ravel()

        system = LinearOperator((size, size), matvec=matvec, dtype=complex)
        preconditioner = LinearOperator((size, size), matvec=precondition, dtype=complex)
        x, _info = gmres(
            system, rho.astype(complex).ravel(), rtol=tol, atol=0.0, restart=60,
            maxiter=200, M=preconditioner,
        )
        phi = x.reshape(shape)
        residual = np.max(np.abs(complex_laplacian(metric, phi) + grid.mean(phi) - rho))
        if residual > 1e-8 * max(1.0, float(np.max(np.abs(rho)))):
            raise RuntimeError(f"complex Laplacian solve did not converge (residual {residual:.3e})")

    phi = phi - grid.mean(phi)
    if np.isrealobj(rho):
        return phi.real
    return phi


def chern_divergence(metric: HermitianMetricField) -> Tuple[np.ndarray, np.ndarray]:
    """dbar_k (vol g^{j kbar}) and its torsion form vol g^{j qbar} conj(tau_q)."""
    grid = metric.grid
    weight = metric.weight
    divergence = sum(grid.partial_zbar(weight[..., :, k], k) for k in range(grid.complex_dim))
    torsion_form = metric.vol[..., None] * np.einsum(
        "...jq,...q->...j", metric.g_inv, np.conj(metric.torsion_trace)
    )
    return divergence, torsion_form


def gauduchon_torsion_field(metric: HermitianMetricField) -> np.ndarray:
    """g^{k jbar}(dbar_j tau_k + tau_k conj(tau_j)), which vanishes for Gauduchon g."""
    grid = metric.grid
    tau = metric.torsion_trace
    dbar_tau = np.stack([grid.partial_zbar(tau, j) for j in range(grid.complex_dim)], axis=-2)
    first = np.einsum("...kj,...jk->...", metric.g_inv, dbar_tau)
    second = np.einsum("...kj,...k,...j->...", metric.g_inv, tau, np.conj(tau))
    return first + second


def torsion_identity_residuals(metric: HermitianMetricField) -> Dict[str, float]:
    contracted = np.einsum("...kj,...k->...j", metric.g_inv, metric.torsion_trace)
    return {
        "semik_id": float(np.max(np.abs(contracted))),
        "gaud_id": float(np.max(np.abs(gauduchon_torsion_field(metric)))),
    }


def _relative(lhs: complex, rhs: complex, magnitude: float) -> float:
    """|lhs - rhs| over the larger of |lhs|, |rhs| and the integrated integrand magnitude."""
    scale = max(abs(lhs), abs(rhs), magnitude)
    if scale < 1e-300:
        return 0.0
    return abs(lhs - rhs) / scale


def _magnitude(metric: HermitianMetricField, *integrands: np.ndarray) -> float:
    return sum(float(metric.grid.integrate(np.abs(f), metric.vol).real) for f in integrands)


def torsion_adjoint_check(metric: HermitianMetricField, psi: np.ndarray, phi: np.ndarray) -> Dict[str, Any]:
    """Divergence side against torsion side for the (1,0)-form psi and test function phi.

    lhs = -int g^{j kbar} dbar_k(phi conj(psi_j)) vol,
    rhs = int phi conj(psi_j g^{k jbar} tau_k) vol.
    """
    grid = metric.grid
    n = grid.complex_dim
    carried = phi[..., None] * np.conj(psi)
    derivative = np.stack([grid.partial_zbar(carried, k) for k in range(n)], axis=-1)
    divergence = np.einsum("...jk,...jk->...", metric.g_inv, derivative)
    hodge = -grid.integrate(divergence, metric.vol)
    coupled = phi * np.conj(np.einsum("...j,...kj,...k->...", psi, metric.g_inv, metric.torsion_trace))
    torsion = grid.integrate(coupled, metric.vol)
    relative = _relative(hodge, torsion, _magnitude(metric, divergence, coupled))
    return {"lhs": hodge, "rhs": torsion, "relative": relative}


def torsion_divergence_check(metric: HermitianMetricField, phi: np.ndarray) -> Dict[str, Any]:
    """Torsion divergence field against ddbar(omega^{n-1}) tested with phi."""
    grid = metric.grid
    tested = phi * gauduchon_torsion_field(metric)
    lhs = grid.integrate(tested, metric.vol)
    weighted = phi * np.conj(ddbar_weight(metric))
    rhs = complex(np.sum(weighted) * grid.cell_area)
    magnitude = _magnitude(metric, tested) + float(np.sum(np.abs(weighted)) * grid.cell_area)
    return {"lhs": lhs, "rhs": rhs, "relative": _relative(lhs, rhs, magnitude)}


def integration_by_parts_check(
    metric: HermitianMetricField, f: np.ndarray, form: np.ndarray
) -> Dict[str, Any]:
    """int g^{j kbar} dbar_k f form_j vol against -int f g^{j kbar} dbar_k form_j vol."""
    grid = metric.grid
    n = grid.complex_dim
    df = np.stack([grid.partial_zbar(f, k) for k in range(n)], axis=-1)
    dform = np.stack([grid.partial_zbar(form, k) for k in range(n)], axis=-1)
    left = np.einsum("...jk,...k,...j->...", metric.g_inv, df, form)
    right = f * np.einsum("...jk,...jk->...", metric.g_inv, dform)
    lhs = grid.integrate(left, metric.vol)
    rhs = -grid.integrate(right, metric.vol)
    return {"lhs": lhs, "rhs": rhs, "relative": _relative(lhs, rhs, _magnitude(metric, left, right))}


def random_test_forms(
    grid: LatticeGrid, rng: np.random.Generator, count: int, max_mode: int = 1
) -> Sequence[Tuple[np.ndarray, np.ndarray]]:
    """Band-limited (scalar, (1,0)-form) pairs for the integral identities."""
    pairs = []
    for _ in range(count):
        phi = random_scalar_field(grid, rng, max_mode=max_mode)
        psi = np.stack(
            [random_scalar_field(grid, rng, max_mode=max_mode, real=False)
             for _ in range(grid.complex_dim)],
            axis=-1,
        )
        pairs.append((phi, psi))
    return pairs
