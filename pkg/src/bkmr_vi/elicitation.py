"""OLS-based prior elicitation for the informative-prior fit."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ElicitationError, InputError
from .model import Dataset, PriorSpec

#: Vague prior on the kernel scale used by the elicitation strategy.
TAU0 = 1.0
NU_TAU = 10.0

_COND_WARN = 1e12
_EXACT_FIT_RTOL = 1e-10


@dataclass(frozen=True)
class OlsSummary:
    coef: np.ndarray
    vcov: np.ndarray
    resid_df: int
    sigma2_hat: float


def ols(data: Dataset) -> OlsSummary:
    """Ordinary least squares of ``y`` on ``X``.

    ``sigma2_hat`` is ``RSS / (n - p)`` and ``vcov = sigma2_hat * (X'X)^{-1}``.
    A noiseless response yields ``sigma2_hat == 0`` rather than an error.
    """
    return ols_arrays(data.X, data.y)


def ols_arrays(X, y) -> OlsSummary:
    """:func:`ols` on raw arrays; only needs ``n > p``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if y.shape[0] != n:
        raise InputError(f"row mismatch: y has {y.shape[0]}, X has {n}")
    if n <= p:
        raise InputError(f"OLS needs n > p (n={n}, p={p})")
    XtX = X.T @ X
    try:
        c = linalg.cho_factor(XtX, lower=True)
    except linalg.LinAlgError:
        raise InputError("X'X is singular; X is rank deficient") from None
    coef = linalg.cho_solve(c, X.T @ y)
    resid = y - X @ coef
    df = n - p
    rss = float(resid @ resid)
    # A residual at rounding level relative to y means an exact linear fit.
    if np.sqrt(rss) <= _EXACT_FIT_RTOL * np.linalg.norm(y):
        rss = 0.0
    sigma2_hat = rss / df
    XtX_inv = linalg.cho_solve(c, np.eye(p))
    XtX_inv = (XtX_inv + XtX_inv.T) / 2.0
    return OlsSummary(coef=coef, vcov=sigma2_hat * XtX_inv, resid_df=df,
                      sigma2_hat=sigma2_hat)


def elicit_priors(data: Dataset) -> PriorSpec:
    """Informative priors centred on the OLS fit of ``y`` on ``X``.

    The covariate prior is ``N(coef, vcov)``, the residual-variance prior has
    the residual degrees of freedom and the OLS variance as scale, and the
    kernel scale gets the vague ``tau0 = 1``, ``nu_tau = 10`` prior.
    """
    return prior_from_ols(ols(data))


def prior_from_ols(fit: OlsSummary) -> PriorSpec:
    """The elicitation rule applied to an existing OLS summary."""
    if not fit.sigma2_hat > 0:
        raise ElicitationError(
            "residual variance is zero (y is an exact linear function of X); "
            "OLS elicitation is undefined, fit with flat priors instead")
    Sigma = fit.vcov
    eig = np.linalg.eigvalsh(Sigma)
    if eig[0] <= 0 or eig[-1] / eig[0] > _COND_WARN:
        jitter = 1e-8 * np.trace(Sigma) / Sigma.shape[0]
        warnings.warn(
            f"OLS covariance is near-singular; adding {jitter:.3g} to its diagonal",
            RuntimeWarning, stacklevel=2)
        Sigma = Sigma + jitter * np.eye(Sigma.shape[0])
    return PriorSpec.informative(
        mu=fit.coef, Sigma=Sigma, nu_sigma=float(fit.resid_df),
        sigma0_sq=fit.sigma2_hat, nu_tau=NU_TAU, tau0=TAU0)
