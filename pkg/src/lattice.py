"""Periodic lattice and spectral calculus for the complex torus."""

from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class LatticeGrid:
    """Periodic lattice over the real 2n-torus underlying a complex n-torus.

    Fields are numpy arrays whose first 2n axes are the lattice axes, followed by
    any component axes. Complex coordinate j pairs real axes 2j and 2j+1,
    z^j = x^{2j} + i x^{2j+1}.
    """

    complex_dim: int
    points_per_axis: int
    periods: Optional[Tuple[float, ...]] = None
    dealias: bool = False

    def __post_init__(self):
        if self.complex_dim not in (1, 2):
            raise ValueError(f"complex_dim must be 1 or 2, got {self.complex_dim}")
        if self.points_per_axis < 8 or self.points_per_axis % 2:
            raise ValueError(
                f"points_per_axis must be an even integer >= 8, got {self.points_per_axis}"
            )
        periods = self.periods
        if periods is None:
            periods = (1.0,) * self.real_dim
        periods = tuple(float(p) for p in periods)
        if len(periods) != self.real_dim:
            raise ValueError(f"expected {self.real_dim} periods, got {len(periods)}")
        if min(periods) <= 0:
            raise ValueError("periods must be positive")
        object.__setattr__(self, "periods", periods)

    @property
    def real_dim(self) -> int:
        return 2 * self.complex_dim

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_axis,) * self.real_dim

    @property
    def axes(self) -> Tuple[int, ...]:
        return tuple(range(self.real_dim))

    @property
    def site_count(self) -> int:
        return self.points_per_axis ** self.real_dim

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(p / self.points_per_axis for p in self.periods)

    @property
    def cell_area(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Real coordinates x^0 ... x^{2n-1} sampled on the lattice."""
        axes = [np.arange(self.points_per_axis) * h for h in self.spacing]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def wavenumbers(self, axis: int) -> np.ndarray:
        """Angular wavenumbers along one real axis, Nyquist mode zeroed."""
        n_pts = self.points_per_axis
        k = 2 * np.pi * np.fft.fftfreq(n_pts, d=self.periods[axis] / n_pts)
        k[n_pts // 2] = 0.0
        return k

    @cached_property
    def _wavevectors(self) -> Tuple[np.ndarray, ...]:
        vectors = []
        for axis in self.axes:
            shape = [1] * self.real_dim
            shape[axis] = self.points_per_axis
            vectors.append(self.wavenumbers(axis).reshape(shape))
        return tuple(vectors)

    @cached_property
    def _dealias_mask(self) -> np.ndarray:
        modes = np.abs(np.fft.fftfreq(self.points_per_axis) * self.points_per_axis)
        keep = modes <= self.points_per_axis // 3
        mask = np.ones(self.shape, dtype=bool)
        for axis in self.axes:
            shape = [1] * self.real_dim
            shape[axis] = self.points_per_axis
            mask = mask & keep.reshape(shape)
        return mask

    def _check_complex_axis(self, j: int) -> None:
        if not 0 <= j < self.complex_dim:
            raise ValueError(
                f"complex axis {j} out of range for complex dimension {self.complex_dim}"
            )

    def symbol_z(self, j: int) -> np.ndarray:
        """Fourier symbol of d/dz^j = (d/dx^{2j} - i d/dx^{2j+1}) / 2."""
        self._check_complex_axis(j)
        kx, ky = self._wavevectors[2 * j], self._wavevectors[2 * j + 1]
        return np.broadcast_to(0.5 * (1j * kx + ky), self.shape)

    def symbol_zbar(self, k: int) -> np.ndarray:
        """Fourier symbol of d/dzbar^k = (d/dx^{2k} + i d/dx^{2k+1}) / 2."""
        self._check_complex_axis(k)
        kx, ky = self._wavevectors[2 * k], self._wavevectors[2 * k + 1]
        return np.broadcast_to(0.5 * (1j * kx - ky), self.shape)

    def _check_field(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        if f.shape[: self.real_dim] != self.shape:
            raise ValueError(
                f"field shape {f.shape} does not start with lattice shape {self.shape}"
            )
        return f

    def _expand(self, symbol: np.ndarray, ndim: int) -> np.ndarray:
        return symbol.reshape(self.shape + (1,) * (ndim - self.real_dim))

    def _apply_symbol(self, f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        f = self._check_field(f)
        spectrum = np.fft.fftn(f, axes=self.axes)
        spectrum = spectrum * self._expand(symbol, f.ndim)
        if self.dealias:
            spectrum = spectrum * self._expand(self._dealias_mask, f.ndim)
        return np.fft.ifftn(spectrum, axes=self.axes)

    def partial_z(self, f: np.ndarray, j: int) -> np.ndarray:
        return self._apply_symbol(f, self.symbol_z(j))

    def partial_zbar(self, f: np.ndarray, k: int) -> np.ndarray:
        return self._apply_symbol(f, self.symbol_zbar(k))

    def partial_x(self, f: np.ndarray, axis: int) -> np.ndarray:
        if not 0 <= axis < self.real_dim:
            raise ValueError(f"real axis {axis} out of range")
        symbol = np.broadcast_to(1j * self._wavevectors[axis], self.shape)
        return self._apply_symbol(f, symbol)

    def complex_hessian(self, f: np.ndarray) -> np.ndarray:
        """Mixed second derivatives of a scalar field, indexed [..., j, k] = d_j dbar_k f."""
        f = self._check_field(f)
        if f.ndim != self.real_dim:
            raise ValueError("complex_hessian expects a scalar field")
        spectrum = np.fft.fftn(f, axes=self.axes)
        if self.dealias:
            spectrum = spectrum * self._dealias_mask
        n = self.complex_dim
        out = np.empty(self.shape + (n, n), dtype=complex)
        for j in range(n):
            for k in range(n):
                out[..., j, k] = np.fft.ifftn(
                    spectrum * self.symbol_z(j) * self.symbol_zbar(k), axes=self.axes
                )
        return out

    def ddbar_divergence(self, field: np.ndarray) -> np.ndarray:
        """Scalar field sum_{j,k} d_j dbar_k field[..., j, k]."""
        field = self._check_field(field)
        n = self.complex_dim
        if field.shape[self.real_dim :] != (n, n):
            raise ValueError("ddbar_divergence expects an n x n coefficient field")
        spectrum = np.fft.fftn(field, axes=self.axes)
        total = np.zeros(self.shape, dtype=complex)
        for j in range(n):
            for k in range(n):
                total += spectrum[..., j, k] * self.symbol_z(j) * self.symbol_zbar(k)
        if self.dealias:
            total = total * self._dealias_mask
        return np.fft.ifftn(total, axes=self.axes)

    def filter(self, f: np.ndarray) -> np.ndarray:
        """2/3-rule truncation when dealiasing is enabled, identity otherwise."""
        if not self.dealias:
            return f
        return self._apply_symbol(f, np.ones(self.shape))

    def integrate(self, f: np.ndarray, vol: np.ndarray):
        """Riemann sum of f * vol * cell_area over the lattice."""
        vol = np.asarray(vol)
        if np.iscomplexobj(vol):
            if np.max(np.abs(vol.imag)) > 1e-12:
                raise ValueError("volume form must be real")
            vol = vol.real
        if vol.shape != self.shape:
            raise ValueError(f"volume form must have lattice shape {self.shape}")
        if np.min(vol) <= 0:
            raise ValueError("volume form must be positive")
        f = self._check_field(f)
        total = np.sum(f * self._expand(vol, f.ndim), axis=self.axes) * self.cell_area
        if np.ndim(total) == 0:
            return complex(total)
        return total

    def mean(self, f: np.ndarray):
        return np.mean(self._check_field(f), axis=self.axes)


def _random_modes(
    grid: LatticeGrid, rng: np.random.Generator, max_mode: int, components: Tuple[int, ...]
) -> np.ndarray:
    if max_mode < 0 or max_mode > grid.points_per_axis // 4:
        raise ValueError(
            f"max_mode must lie in [0, {grid.points_per_axis // 4}] to stay band-limited"
        )
    n_pts = grid.points_per_axis
    coeffs = np.zeros(grid.shape + components, dtype=complex)
    for index in product(range(-max_mode, max_mode + 1), repeat=grid.real_dim):
        site = tuple(m % n_pts for m in index)
        coeffs[site] = rng.standard_normal(components) + 1j * rng.standard_normal(components)
    return np.fft.ifftn(coeffs, axes=grid.axes)


def _rescale(f: np.ndarray, amplitude: float) -> np.ndarray:
    peak = np.max(np.abs(f))
    if peak == 0:
        return f
    return f * (amplitude / peak)


def random_scalar_field(
    grid: LatticeGrid,
    rng: np.random.Generator,
    max_mode: int = 1,
    amplitude: float = 1.0,
    real: bool = True,
) -> np.ndarray:
    """Seeded band-limited scalar field with max-norm equal to amplitude."""
    f = _random_modes(grid, rng, max_mode, ())
    if real:
        f = f.real
    return _rescale(f, amplitude)


def random_hermitian_field(
    grid: LatticeGrid,
    rng: np.random.Generator,
    size: int,
    max_mode: int = 1,
    amplitude: float = 1.0,
    traceless: bool = False,
) -> np.ndarray:
    """Seeded band-limited field of Hermitian size x size matrices."""
    m = _random_modes(grid, rng, max_mode, (size, size))
    herm = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
    if traceless:
        tr = np.trace(herm, axis1=-2, axis2=-1)
        herm = herm - tr[..., None, None] * np.eye(size) / size
    return _rescale(herm, amplitude)
