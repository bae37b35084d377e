"""Site-wise matrix algebra for endomorphism and metric fields."""

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

ArrayFunc = Callable[[np.ndarray], np.ndarray]


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dagger(a))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def trace(a: np.ndarray) -> np.ndarray:
    return np.trace(a, axis1=-2, axis2=-1)


def identity_field(shape: Tuple[int, ...], size: int) -> np.ndarray:
    return np.broadcast_to(np.eye(size, dtype=complex), shape + (size, size)).copy()


def hermitian_defect(a: np.ndarray) -> float:
    """Max-norm of a - a* over all sites."""
    return float(np.max(np.abs(a - dagger(a))))


def assemble(eigvecs: np.ndarray, values: np.ndarray) -> np.ndarray:
    """V diag(values) V* at every site."""
    return (eigvecs * values[..., None, :]) @ dagger(eigvecs)


def herm_func(a: np.ndarray, func: ArrayFunc) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(a))
    return assemble(v, func(w))


def herm_exp(a: np.ndarray) -> np.ndarray:
    return herm_func(a, np.exp)


def herm_sqrt(a: np.ndarray) -> np.ndarray:
    return herm_func(a, np.sqrt)


def herm_inv_sqrt(a: np.ndarray) -> np.ndarray:
    return herm_func(a, lambda w: 1.0 / np.sqrt(w))


def metric_adjoint(m: np.ndarray, metric: np.ndarray) -> np.ndarray:
    """Adjoint H^{-1} m* H of an endomorphism with respect to a bundle metric H."""
    return np.linalg.solve(metric, dagger(m) @ metric)


def divided_differences(
    w: np.ndarray, func: ArrayFunc, dfunc: ArrayFunc, tol: float = 1e-10
) -> np.ndarray:
    """Loewner matrix (f(w_a) - f(w_b)) / (w_a - w_b), derivative on near-ties."""
    wa = w[..., :, None]
    wb = w[..., None, :]
    diff = wa - wb
    close = np.abs(diff) <= tol * np.maximum(1.0, np.abs(wa) + np.abs(wb))
    safe = np.where(close, 1.0, diff)
    quotient = (func(wa) - func(wb)) / safe
    return np.where(close, dfunc(0.5 * (wa + wb)), quotient)


@dataclass(frozen=True, eq=False)
class RelativeFrame:
    """Symmetrized view of the endomorphism h = H0^{-1} H.

    With P = H0^{1/2} and S = P^{-1} H P^{-1} Hermitian positive, every function of
    h is P^{-1} f(S) P, and the path h^u corresponds to the metric P S^u P.
    """

    root: np.ndarray
    root_inv: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @classmethod
    def from_metrics(cls, reference: np.ndarray, metric: np.ndarray) -> "RelativeFrame":
        w0, v0 = np.linalg.eigh(hermitize(reference))
        if np.min(w0) <= 0:
            raise ValueError("reference metric is not positive definite")
        root = assemble(v0, np.sqrt(w0))
        root_inv = assemble(v0, 1.0 / np.sqrt(w0))
        w, v = np.linalg.eigh(hermitize(root_inv @ metric @ root_inv))
        return cls(root=root, root_inv=root_inv, eigvals=w, eigvecs=v)

    @property
    def is_positive(self) -> bool:
        return bool(np.all(np.isfinite(self.eigvals)) and np.min(self.eigvals) > 0)

    def sym_function(self, func: ArrayFunc) -> np.ndarray:
        return assemble(self.eigvecs, func(self.eigvals))

    def to_endo(self, x: np.ndarray) -> np.ndarray:
        return self.root_inv @ x @ self.root

    def to_sym(self, e: np.ndarray) -> np.ndarray:
        return self.root @ e @ self.root_inv

    def endo_function(self, func: ArrayFunc) -> np.ndarray:
        return self.to_endo(self.sym_function(func))

    def metric_power(self, u: float) -> np.ndarray:
        """Bundle metric H0 h^u."""
        return self.root @ self.sym_function(lambda w: w ** u) @ self.root

    @property
    def h(self) -> np.ndarray:
        return self.endo_function(lambda w: w)

    @property
    def log(self) -> np.ndarray:
        return self.endo_function(np.log)

    def frechet_power(self, direction: np.ndarray, u: float) -> np.ndarray:
        """Derivative of S -> S^u at S in a Hermitian direction."""
        v = self.eigvecs
        local = dagger(v) @ direction @ v
        loewner = divided_differences(
            self.eigvals, lambda w: w ** u, lambda w: u * w ** (u - 1.0)
        )
        return v @ (loewner * local) @ dagger(v)
