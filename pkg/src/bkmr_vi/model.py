"""Data, prior and variational-posterior containers plus small distribution helpers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .errors import InputError

INFORMATIVE = "informative"
FLAT = "flat"


def _finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class Dataset:
    """Response ``y`` (n), covariate design ``X`` (n x p) and exposures ``Z`` (n x m).

    ``X`` is used as given; an intercept column, if wanted, must already be there.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Z.ndim == 1:
            Z = Z[:, None]
        if X.ndim != 2 or Z.ndim != 2:
            raise InputError("X and Z must be 2-D")
        n = y.shape[0]
        if X.shape[0] != n or Z.shape[0] != n:
            raise InputError(
                f"row mismatch: y has {n}, X has {X.shape[0]}, Z has {Z.shape[0]}")
        p = X.shape[1]
        if n < p + 2:
            raise InputError(f"need n >= p + 2 observations (n={n}, p={p})")
        if Z.shape[1] < 1:
            raise InputError("need at least one exposure column")
        _finite("y", y)
        _finite("X", X)
        _finite("Z", Z)
        if np.linalg.matrix_rank(X) < p:
            raise InputError("covariate matrix X is not of full column rank")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior on the covariate effects and scaled-inverse-chi-squared
    priors on the residual variance and the kernel scale.

    Use :meth:`informative` or :meth:`flat` rather than the raw constructor.
    """

    flavor: str
    mu: Optional[np.ndarray] = None
    Sigma: Optional[np.ndarray] = None
    nu_sigma: Optional[float] = None
    sigma0_sq: Optional[float] = None
    nu_tau: Optional[float] = None
    tau0: Optional[float] = None

    def __post_init__(self):
        fields = (self.mu, self.Sigma, self.nu_sigma, self.sigma0_sq,
                  self.nu_tau, self.tau0)
        if self.flavor == FLAT:
            if any(f is not None for f in fields):
                raise InputError("flat priors take no hyperparameters")
            return
        if self.flavor != INFORMATIVE:
            raise InputError(f"unknown prior flavor {self.flavor!r}")
        if any(f is None for f in fields):
            raise InputError("informative priors need every hyperparameter")
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if Sigma.shape != (mu.size, mu.size):
            raise InputError(
                f"Sigma shape {Sigma.shape} does not match mu length {mu.size}")
        _finite("mu", mu)
        _finite("Sigma", Sigma)
        if not np.allclose(Sigma, Sigma.T, rtol=1e-10, atol=0):
            raise InputError("Sigma is not symmetric")
        try:
            np.linalg.cholesky(Sigma)
        except np.linalg.LinAlgError:
            raise InputError("Sigma is not positive definite") from None
        for name in ("nu_sigma", "sigma0_sq", "nu_tau", "tau0"):
            value = float(getattr(self, name))
            if not (np.isfinite(value) and value > 0):
                raise InputError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sigma)

    @classmethod
    def informative(cls, mu, Sigma, nu_sigma, sigma0_sq, nu_tau, tau0):
        return cls(INFORMATIVE, mu, Sigma, nu_sigma, sigma0_sq, nu_tau, tau0)

    @classmethod
    def flat(cls):
        return cls(FLAT)

    @property
    def is_flat(self) -> bool:
        return self.flavor == FLAT

    def to_dict(self) -> dict:
        if self.is_flat:
            return {"flavor": FLAT}
        return {
            "flavor": INFORMATIVE,
            "mu": self.mu.tolist(),
            "Sigma": self.Sigma.tolist(),
            "nu_sigma": self.nu_sigma,
            "sigma0_sq": self.sigma0_sq,
            "nu_tau": self.nu_tau,
            "tau0": self.tau0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        if d["flavor"] == FLAT:
            return cls.flat()
        return cls.informative(d["mu"], d["Sigma"], d["nu_sigma"],
                               d["sigma0_sq"], d["nu_tau"], d["tau0"])


@dataclass(frozen=True)
class VariationalPosterior:
    """Parameters of q(beta) q(h) q(sigma^2) q(tau).

    The scale fields follow the scaled-inverse-chi-squared convention in which
    ``E_q[1/sigma^2] = 1 / scale_sigma_q``.
    """

    mu_beta: np.ndarray
    Sigma_beta: np.ndarray
    mu_h: np.ndarray
    Sigma_h: np.ndarray
    nu_sigma_q: float
    scale_sigma_q: float
    nu_tau_q: float
    scale_tau_q: float

    def sd_beta(self) -> np.ndarray:
        return np.sqrt(np.diag(self.Sigma_beta))

    def sd_h(self) -> np.ndarray:
        return np.sqrt(np.diag(self.Sigma_h))


@dataclass
class ConvergenceTrace:
    """Objective values recorded once per sweep (up to an additive constant)."""

    criterion: float
    burn_in: int
    objective_values: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.objective_values)

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "burn_in": self.burn_in,
            "iterations": self.iterations,
            "converged": self.converged,
            "objective_values": [float(v) for v in self.objective_values],
        }


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if not (value > 0):
            raise InputError(f"{name} must be positive, got {value}")


def sinvchi2_mode(nu: float, scale: float) -> float:
    """Mode ``nu * scale / (nu + 2)`` of a Scale-Inv-chi^2(nu, scale) density."""
    _check_positive(nu=nu, scale=scale)
    if np.isinf(nu):
        return float(scale)
    return nu * scale / (nu + 2.0)


def sinvchi2_mean_inverse(nu: float, scale: float) -> float:
    """``E[1/sigma^2]`` under the q-density parameterization used by the updates.

    This is ``1 / scale`` irrespective of ``nu``. The textbook mean of the
    inverse of a Scale-Inv-chi^2(nu, s^2) variable is also ``1 / s^2``, so the
    degrees of freedom genuinely drop out.
    """
    _check_positive(nu=nu, scale=scale)
    return 1.0 / scale


@dataclass(frozen=True)
class Intervals:
    lower: np.ndarray
    upper: np.ndarray
    level: float

    @property
    def half_width(self) -> np.ndarray:
        return (self.upper - self.lower) / 2.0

    def __len__(self):
        return self.lower.shape[0]


def z_multiplier(level: float) -> float:
    """Two-sided normal multiplier; exactly 1.96 at the 95% level."""
    if not 0.0 < level < 1.0:
        raise InputError(f"level must lie in (0, 1), got {level}")
    if level == 0.95:
        return 1.96
    return float(stats.norm.ppf((1.0 + level) / 2.0))


def wald_intervals(mean, cov, level: float = 0.95) -> Intervals:
    """Per-coordinate ``mean +/- z * sqrt(diag(cov))`` intervals.

    ``cov`` may be singular (zero-width intervals) but not indefinite.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mean.size, mean.size):
        raise InputError(f"cov shape {cov.shape} does not match mean length {mean.size}")
    z = z_multiplier(level)
    scale = max(float(np.max(np.abs(cov))), np.finfo(float).tiny)
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-10 * scale):
        raise InputError("covariance is not symmetric")
    if np.min(np.linalg.eigvalsh((cov + cov.T) / 2.0)) < -1e-10 * scale:
        raise InputError("covariance is not positive semi-definite")
    half = z * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return Intervals(mean - half, mean + half, level)


def wald_intervals_diag(mean, var, level: float = 0.95) -> Intervals:
    """Like :func:`wald_intervals` but from marginal variances only.

    Skips the O(n^3) definiteness check, which matters for the n x n
    covariance of ``h``.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    var = np.atleast_1d(np.asarray(var, dtype=float))
    if var.shape != mean.shape:
        raise InputError("mean and variance lengths differ")
    if np.any(var < 0):
        raise InputError("negative variance")
    half = z_multiplier(level) * np.sqrt(var)
    return Intervals(mean - half, mean + half, level)
