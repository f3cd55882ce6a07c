"""GLS re-estimation of covariate effects from a fitted variational posterior."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .engine import FitResult
from .errors import InputError, NumericalError
from .model import Dataset, Intervals, wald_intervals


@dataclass(frozen=True)
class GlsResult:
    beta_gls: np.ndarray
    cov_gls: np.ndarray
    Sigma_y: np.ndarray

    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_gls))


def gls_estimate(X, z, Sigma_y) -> tuple[np.ndarray, np.ndarray]:
    """GLS of ``z`` on ``X`` with known covariance ``Sigma_y``.

    Returns ``(beta, cov)`` with ``cov = (X' Sigma_y^{-1} X)^{-1}``.
    """
    X = np.asarray(X, dtype=float)
    try:
        L = linalg.cholesky(Sigma_y, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("Sigma_y is not positive definite") from exc
    # Whiten: with W = L^{-1}, X' Sigma^{-1} X = (W X)'(W X).
    WX = linalg.solve_triangular(L, X, lower=True)
    Wz = linalg.solve_triangular(L, z, lower=True)
    A = WX.T @ WX
    try:
        LA = linalg.cholesky(A, lower=True)
    except linalg.LinAlgError:
        raise InputError("X' Sigma_y^{-1} X is singular; X is rank deficient") from None
    beta = linalg.cho_solve((LA, True), WX.T @ Wz)
    cov = linalg.cho_solve((LA, True), np.eye(A.shape[0]))
    return beta, (cov + cov.T) / 2.0


def gls_correct(fit: FitResult, data: Dataset) -> GlsResult:
    """Regress ``y - mu_h`` on ``X`` with covariance ``Sigma_h + sigma2_map I``."""
    post = fit.posterior
    if post.Sigma_h.shape != (data.n, data.n):
        raise InputError("fit and dataset disagree on the number of observations")
    Sigma_y = post.Sigma_h + fit.sigma2_map * np.eye(data.n)
    beta, cov = gls_estimate(data.X, data.y - post.mu_h, Sigma_y)
    return GlsResult(beta_gls=beta, cov_gls=cov, Sigma_y=Sigma_y)


def gls_intervals(res: GlsResult, level: float = 0.95) -> Intervals:
    return wald_intervals(res.beta_gls, res.cov_gls, level)
