"""Exact Gaussian posterior of ``(h, beta)`` for known variance parameters.

Used to check the mean-field fixed point. Everything is formed densely with
explicit inverses, deliberately sharing no code with the VI updates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalError
from .model import Dataset

MAX_N = 50


@dataclass(frozen=True)
class ExactPosterior:
    mean_h: np.ndarray
    mean_beta: np.ndarray
    cov: np.ndarray  # joint covariance, h block first

    @property
    def var_h(self) -> np.ndarray:
        n = self.mean_h.size
        return np.diag(self.cov)[:n]

    @property
    def var_beta(self) -> np.ndarray:
        n = self.mean_h.size
        return np.diag(self.cov)[n:]


def exact_gaussian_oracle(data: Dataset, K, sigma2: float, tau: float,
                          prior_mu: Optional[np.ndarray] = None,
                          prior_Sigma: Optional[np.ndarray] = None) -> ExactPosterior:
    """Joint posterior of ``(h, beta)`` given ``y`` with ``sigma2`` and ``tau`` fixed.

    ``K`` may be a raw array or a :class:`~bkmr_vi.kernel.KernelMatrix`. The
    prior on ``beta`` is flat unless ``prior_mu``/``prior_Sigma`` are given.
    """
    if data.n > MAX_N:
        raise ValueError(f"dense oracle is limited to n <= {MAX_N}")
    K = np.asarray(getattr(K, "K", K), dtype=float)
    X, y = data.X, data.y
    n, p = X.shape
    try:
        K_inv = np.linalg.inv(K)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("oracle: kernel is singular") from exc
    P = np.zeros((n + p, n + p))
    P[:n, :n] = np.eye(n) / sigma2 + K_inv / tau
    P[:n, n:] = X / sigma2
    P[n:, :n] = X.T / sigma2
    P[n:, n:] = X.T @ X / sigma2
    b = np.concatenate([y / sigma2, X.T @ y / sigma2])
    if prior_Sigma is not None:
        S_inv = np.linalg.inv(prior_Sigma)
        P[n:, n:] += S_inv
        b[n:] += S_inv @ prior_mu
    try:
        cov = np.linalg.inv(P)
        mean = np.linalg.solve(P, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("oracle: joint precision is singular") from exc
    return ExactPosterior(mean_h=mean[:n], mean_beta=mean[n:], cov=(cov + cov.T) / 2)
