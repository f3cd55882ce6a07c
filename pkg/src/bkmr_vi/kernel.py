"""Quadratic exposure kernel, positive-definite repair and Cholesky solves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InputError, NumericalError

DEFAULT_EPS_FLOOR = 1e-8
_SYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class KernelMatrix:
    """A symmetric positive-definite kernel matrix with its factorizations.

    Attributes:
        K: The ``n x n`` kernel.
        chol: Lower-triangular Cholesky factor, ``K = chol @ chol.T``.
        eps_floor: Relative eigenvalue floor that was used during repair.
        eigvals: Eigenvalues of ``K`` in ascending order.
        eigvecs: Orthonormal eigenvectors of ``K`` (columns).
        repaired: Whether any eigenvalue had to be lifted to the floor.
    """

    K: np.ndarray
    chol: np.ndarray
    eps_floor: float
    eigvals: np.ndarray
    eigvecs: np.ndarray
    repaired: bool = False

    def __post_init__(self):
        for arr in (self.K, self.chol, self.eigvals, self.eigvecs):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def _as_exposures(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2:
        raise InputError(f"exposure matrix must be 2-D, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise InputError("exposure matrix contains non-finite entries")
    return Z


def quadratic_kernel(Z) -> np.ndarray:
    """Return the inhomogeneous quadratic kernel ``(1 + z_i . z_j) ** 2``.

    ``Z`` is ``n x m`` (a 1-D array is treated as a single pollutant).
    The result is rank-deficient whenever ``n`` exceeds the number of
    distinct degree-two monomials, so it usually needs :func:`nearest_pd`.
    """
    Z = _as_exposures(Z)
    G = Z @ Z.T
    S = (1.0 + G) ** 2
    # G is symmetric up to BLAS rounding; make it exact.
    return (S + S.T) / 2.0


def nearest_pd(S, eps_floor: float = DEFAULT_EPS_FLOOR) -> KernelMatrix:
    """Project a symmetric matrix onto matrices with a relative eigenvalue floor.

    Without a unit-diagonal constraint the Higham alternating projection
    collapses to one spectral projection: eigenvalues below
    ``eps_floor * rho(S)`` are raised to that floor, where ``rho`` is the
    spectral radius. This is the Frobenius-nearest matrix satisfying the
    floor. Matrices already satisfying it are returned unchanged.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InputError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InputError("matrix contains non-finite entries")
    if not eps_floor > 0:
        raise InputError(f"eps_floor must be positive, got {eps_floor}")
    scale = max(np.max(np.abs(S)), 1.0)
    if np.max(np.abs(S - S.T)) > _SYMMETRY_TOL * scale:
        raise InputError("matrix is not symmetric within tolerance")
    S = (S + S.T) / 2.0

    w, V = np.linalg.eigh(S)
    rho = float(np.max(np.abs(w))) if w.size else 0.0
    floor = eps_floor * rho if rho > 0 else eps_floor
    repaired = bool(np.any(w < floor))
    if repaired:
        w = np.maximum(w, floor)
        K = (V * w) @ V.T
        K = (K + K.T) / 2.0
    else:
        K = S.copy()
    try:
        chol = linalg.cholesky(K, lower=True)
    except linalg.LinAlgError as exc:  # pragma: no cover - guarded by the floor
        raise NumericalError("Cholesky failed after eigenvalue repair") from exc
    return KernelMatrix(K=K, chol=chol, eps_floor=float(eps_floor),
                        eigvals=w, eigvecs=V, repaired=repaired)


def build_kernel(Z, eps_floor: float = DEFAULT_EPS_FLOOR) -> KernelMatrix:
    """Quadratic kernel of ``Z`` followed by positive-definite repair."""
    return nearest_pd(quadratic_kernel(Z), eps_floor=eps_floor)


def kernel_solve(K: KernelMatrix, B) -> np.ndarray:
    """Solve ``K X = B`` with two triangular solves against ``K.chol``."""
    B = np.asarray(B, dtype=float)
    if B.ndim not in (1, 2) or B.shape[0] != K.n:
        raise InputError(
            f"right-hand side of shape {B.shape} does not conform to a "
            f"{K.n} x {K.n} kernel")
    return linalg.cho_solve((K.chol, True), B, check_finite=False)
