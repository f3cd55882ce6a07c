"""Coordinate-ascent mean-field VI for the kernel machine regression model.

The model is ``y ~ N(h + X beta, sigma^2 I)``, ``h ~ N(0, tau K)`` with a
Gaussian prior on ``beta`` and scaled-inverse-chi-squared priors on
``sigma^2`` and ``tau`` (or flat priors on everything). The approximating
family factorizes as ``q(beta) q(h) q(sigma^2) q(tau)``.

Each public ``update_*`` function is the exact minimizer of
:func:`kl_objective` in its own block with the others held fixed, so the
objective never increases along a sweep. These functions operate on dense
matrices and are the reference implementation. :func:`fit` by default runs
the identical updates in the eigenbasis of ``K`` (``q(h)`` keeps that
eigenbasis after its first update), which turns every sweep into O(n^2)
work; ``method="dense"`` runs the reference functions instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg

from .elicitation import ols
from .errors import FitError, InputError, NumericalError
from .kernel import KernelMatrix, kernel_solve
from .model import (ConvergenceTrace, Dataset, PriorSpec, VariationalPosterior,
                    sinvchi2_mean_inverse, sinvchi2_mode)

INIT_STRATEGIES = ("ols-start", "zeros")


@dataclass(frozen=True)
class FitConfig:
    """Loop controls.

    ``tolerance`` applies to the absolute change of the objective between
    consecutive sweeps and is only tested once more than ``burn_in`` sweeps
    have run.
    """

    max_iterations: int = 500
    tolerance: float = 1e-2
    burn_in: int = 10
    init_strategy: str = "ols-start"

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise InputError("max_iterations must be a positive integer")
        if not self.tolerance > 0:
            raise InputError("tolerance must be positive")
        if int(self.burn_in) < 0:
            raise InputError("burn_in must be non-negative")
        if self.burn_in >= self.max_iterations:
            raise InputError("burn_in must be smaller than max_iterations")
        if self.init_strategy not in INIT_STRATEGIES:
            raise InputError(f"init_strategy must be one of {INIT_STRATEGIES}")


@dataclass(frozen=True)
class FitResult:
    posterior: VariationalPosterior
    trace: ConvergenceTrace
    sigma2_map: float
    prior_used: PriorSpec

    @property
    def converged(self) -> bool:
        return self.trace.converged


# ---------------------------------------------------------------- helpers


def _degrees_of_freedom(n: int, prior: PriorSpec) -> tuple[float, float]:
    if prior.is_flat:
        if n <= 2:
            raise InputError(f"flat priors need n > 2 (n={n})")
        return float(n - 2), float(n - 2)
    return float(n + prior.nu_sigma), float(n + prior.nu_tau)


def _check_prior(data: Dataset, prior: PriorSpec):
    if not prior.is_flat and prior.mu.size != data.p:
        raise InputError(
            f"prior mean has length {prior.mu.size} but X has {data.p} columns")


def _chol(A, what):
    try:
        return linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is not positive definite") from exc


def _logdet(A, what) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(_chol(A, what)))))


def _sym(A):
    return (A + A.T) / 2.0


def _spd_inverse(A, what):
    L = _chol(A, what)
    inv = linalg.cho_solve((L, True), np.eye(A.shape[0]), check_finite=False)
    return _sym(inv)


def _trace_quad(X, S):
    """``tr(X S X')`` without forming the n x n product."""
    return float(np.sum((X @ S) * X))


def _objective(prior: PriorSpec, n: int, *, s: float, t: float, logdet_beta: float,
               logdet_h: float, D_sigma: float, D_tau: float,
               prior_quad: float = 0.0) -> float:
    """Assemble KL(q || p) up to a constant from block summaries.

    ``D_sigma = E_q ||y - h - X beta||^2``, ``D_tau = E_q[h' K^{-1} h]`` and
    ``prior_quad = E_q[(beta - mu)' Sigma^{-1} (beta - mu)]``.
    """
    neg_entropy = -0.5 * logdet_beta - 0.5 * logdet_h - math.log(s) - math.log(t)
    if prior.is_flat:
        expected_log_post = (-0.5 * n * math.log(s) - 0.5 * n * math.log(t)
                             - 0.5 * (D_sigma / s + D_tau / t))
    else:
        expected_log_post = (
            -(1.0 + 0.5 * (prior.nu_sigma + n)) * math.log(s)
            - (1.0 + 0.5 * (prior.nu_tau + n)) * math.log(t)
            - 0.5 * (D_sigma / s + prior_quad + D_tau / t
                     + prior.nu_sigma * prior.sigma0_sq / s
                     + prior.nu_tau * prior.tau0 / t))
    return neg_entropy - expected_log_post


# ------------------------------------------------------- reference updates


def expected_sq_residual(state: VariationalPosterior, data: Dataset) -> float:
    """``tr(Sigma_h + X Sigma_beta X') + r'r`` with ``r = y - mu_h - X mu_beta``."""
    r = data.y - state.mu_h - data.X @ state.mu_beta
    return (float(np.trace(state.Sigma_h)) + _trace_quad(data.X, state.Sigma_beta)
            + float(r @ r))


def expected_kernel_quad(state: VariationalPosterior, K: KernelMatrix) -> float:
    """``tr(K^{-1} Sigma_h) + mu_h' K^{-1} mu_h`` via Cholesky solves."""
    return (float(np.trace(kernel_solve(K, state.Sigma_h)))
            + float(state.mu_h @ kernel_solve(K, state.mu_h)))


def update_sigma2(state: VariationalPosterior, data: Dataset, prior: PriorSpec) -> float:
    """New scale of q(sigma^2)."""
    nu_q, _ = _degrees_of_freedom(data.n, prior)
    D = expected_sq_residual(state, data)
    if prior.is_flat:
        return D / nu_q
    return (D + prior.nu_sigma * prior.sigma0_sq) / nu_q


def update_tau(state: VariationalPosterior, data: Dataset, prior: PriorSpec,
               K: KernelMatrix) -> float:
    """New scale of q(tau)."""
    _, nu_q = _degrees_of_freedom(data.n, prior)
    D = expected_kernel_quad(state, K)
    if prior.is_flat:
        return D / nu_q
    return (D + prior.nu_tau * prior.tau0) / nu_q


def update_h(state: VariationalPosterior, data: Dataset, K: KernelMatrix):
    """New ``(mu_h, Sigma_h)``.

    Uses ``(I/s + K^{-1}/t)^{-1} = s t (s I + t K)^{-1} K``, which needs one
    Cholesky factorization of the well-conditioned ``s I + t K`` and never
    inverts ``K`` itself.
    """
    s, t = state.scale_sigma_q, state.scale_tau_q
    if not (s > 0 and t > 0):
        raise InputError("variance scales must be positive before updating h")
    n = K.n
    M = s * np.eye(n) + t * K.K
    L = _chol(M, "s I + t K")
    MinvK = linalg.cho_solve((L, True), K.K, check_finite=False)
    Sigma_h = _sym(s * t * MinvK)
    eps = data.y - data.X @ state.mu_beta
    mu_h = Sigma_h @ eps * sinvchi2_mean_inverse(state.nu_sigma_q, s)
    return mu_h, Sigma_h


def update_beta(state: VariationalPosterior, data: Dataset, prior: PriorSpec):
    """New ``(mu_beta, Sigma_beta)``."""
    s = state.scale_sigma_q
    if not s > 0:
        raise InputError("scale_sigma_q must be positive before updating beta")
    X = data.X
    d = data.y - state.mu_h
    XtX = X.T @ X
    if prior.is_flat:
        try:
            L = linalg.cholesky(XtX, lower=True)
        except linalg.LinAlgError:
            raise InputError("X'X is singular under flat priors") from None
        XtX_inv = _sym(linalg.cho_solve((L, True), np.eye(data.p)))
        Sigma_beta = XtX_inv * s
        mu_beta = Sigma_beta @ (X.T @ d) / s
        return mu_beta, Sigma_beta
    Lp = _chol(prior.Sigma, "prior Sigma")
    prec_prior = _sym(linalg.cho_solve((Lp, True), np.eye(data.p)))
    A = XtX / s + prec_prior
    Sigma_beta = _spd_inverse(A, "q(beta) precision")
    mu_beta = Sigma_beta @ (X.T @ d / s + prec_prior @ prior.mu)
    return mu_beta, Sigma_beta


def kl_objective(state: VariationalPosterior, data: Dataset, prior: PriorSpec,
                 K: KernelMatrix) -> float:
    """KL(q || p) up to an additive constant that depends only on ``n`` and the
    (fixed) degrees of freedom."""
    prior_quad = 0.0
    if not prior.is_flat:
        Lp = _chol(prior.Sigma, "prior Sigma")
        diff = state.mu_beta - prior.mu
        prior_quad = (float(np.trace(linalg.cho_solve((Lp, True), state.Sigma_beta)))
                      + float(diff @ linalg.cho_solve((Lp, True), diff)))
    return _objective(
        prior, data.n,
        s=state.scale_sigma_q, t=state.scale_tau_q,
        logdet_beta=_logdet(state.Sigma_beta, "Sigma_beta"),
        logdet_h=_logdet(state.Sigma_h, "Sigma_h"),
        D_sigma=expected_sq_residual(state, data),
        D_tau=expected_kernel_quad(state, K),
        prior_quad=prior_quad)


def initial_posterior(data: Dataset, prior: PriorSpec, K: KernelMatrix,
                      init_strategy: str = "ols-start") -> VariationalPosterior:
    """Starting state with ``mu_h = 0``, ``Sigma_h = I``.

    ``ols-start`` puts q(beta) at the prior (informative) or at the OLS fit
    (flat); ``zeros`` uses ``N(0, I)``. The two scales are then filled in
    from this state with the regular update formulas.
    """
    _check_prior(data, prior)
    n, p = data.n, data.p
    if K.n != n:
        raise InputError(f"kernel is {K.n} x {K.n} but data has {n} rows")
    nu_s, nu_t = _degrees_of_freedom(n, prior)
    if init_strategy == "zeros":
        mu_beta, Sigma_beta = np.zeros(p), np.eye(p)
    elif init_strategy == "ols-start":
        if prior.is_flat:
            o = ols(data)
            mu_beta = o.coef
            Sigma_beta = o.vcov if o.sigma2_hat > 0 else o.vcov + np.eye(p)
        else:
            mu_beta, Sigma_beta = prior.mu.copy(), prior.Sigma.copy()
    else:
        raise InputError(f"unknown init_strategy {init_strategy!r}")
    state = VariationalPosterior(
        mu_beta=mu_beta, Sigma_beta=Sigma_beta, mu_h=np.zeros(n), Sigma_h=np.eye(n),
        nu_sigma_q=nu_s, scale_sigma_q=1.0, nu_tau_q=nu_t, scale_tau_q=1.0)
    state = replace(state, scale_sigma_q=update_sigma2(state, data, prior))
    return replace(state, scale_tau_q=update_tau(state, data, prior, K))


def sweep(state: VariationalPosterior, data: Dataset, prior: PriorSpec,
          K: KernelMatrix) -> VariationalPosterior:
    """One pass of the reference updates in the order sigma^2, tau, h, beta."""
    state = replace(state, scale_sigma_q=update_sigma2(state, data, prior))
    state = replace(state, scale_tau_q=update_tau(state, data, prior, K))
    mu_h, Sigma_h = update_h(state, data, K)
    state = replace(state, mu_h=mu_h, Sigma_h=Sigma_h)
    mu_beta, Sigma_beta = update_beta(state, data, prior)
    return replace(state, mu_beta=mu_beta, Sigma_beta=Sigma_beta)


# ------------------------------------------------------ spectral fast path


@dataclass
class _SpectralState:
    """q-parameters with ``Sigma_h = U diag(d) U'`` in the eigenbasis of K."""

    mu_beta: np.ndarray
    Sigma_beta: np.ndarray
    g: np.ndarray  # U' mu_h
    d: np.ndarray
    s: float
    t: float


class _SpectralSweeper:
    def __init__(self, data: Dataset, prior: PriorSpec, K: KernelMatrix):
        self.data, self.prior, self.K = data, prior, K
        self.U = K.eigvecs
        self.lam = K.eigvals
        self.Uty = self.U.T @ data.y
        self.UtX = self.U.T @ data.X
        self.nu_s, self.nu_t = _degrees_of_freedom(data.n, prior)
        X = data.X
        self.XtX = X.T @ X
        if prior.is_flat:
            self.XtX_inv = _spd_inverse(self.XtX, "X'X")
        else:
            self.prec_prior = _spd_inverse(prior.Sigma, "prior Sigma")

    def from_posterior(self, post: VariationalPosterior) -> _SpectralState:
        # Keeping only diag(U' Sigma_h U) is exact for the first sweep: the
        # sigma^2 and tau updates read Sigma_h only through tr(Sigma_h) and
        # tr(K^{-1} Sigma_h), and the h update then overwrites it.
        d = np.einsum("ij,jk,ki->i", self.U.T, post.Sigma_h, self.U)
        return _SpectralState(post.mu_beta.copy(), post.Sigma_beta.copy(),
                              self.U.T @ post.mu_h, d, post.scale_sigma_q,
                              post.scale_tau_q)

    def to_posterior(self, st: _SpectralState) -> VariationalPosterior:
        U = self.U
        Sigma_h = _sym((U * st.d) @ U.T)
        return VariationalPosterior(
            mu_beta=st.mu_beta, Sigma_beta=st.Sigma_beta, mu_h=U @ st.g,
            Sigma_h=Sigma_h, nu_sigma_q=self.nu_s, scale_sigma_q=st.s,
            nu_tau_q=self.nu_t, scale_tau_q=st.t)

    def _D_sigma(self, st):
        # Rotation by U preserves the residual norm.
        r = self.Uty - st.g - self.UtX @ st.mu_beta
        return float(np.sum(st.d)) + float(np.sum(self.XtX * st.Sigma_beta)) + float(r @ r)

    def _D_tau(self, st):
        return float(np.sum(st.d / self.lam)) + float(np.sum(st.g ** 2 / self.lam))

    def update_sigma2(self, st):
        D = self._D_sigma(st)
        if self.prior.is_flat:
            st.s = D / self.nu_s
        else:
            st.s = (D + self.prior.nu_sigma * self.prior.sigma0_sq) / self.nu_s

    def update_tau(self, st):
        D = self._D_tau(st)
        if self.prior.is_flat:
            st.t = D / self.nu_t
        else:
            st.t = (D + self.prior.nu_tau * self.prior.tau0) / self.nu_t

    def update_h(self, st):
        s, t, lam = st.s, st.t, self.lam
        st.d = s * t * lam / (t * lam + s)
        st.g = st.d * (self.Uty - self.UtX @ st.mu_beta) / s

    def update_beta(self, st):
        s = st.s
        Xtd = self.UtX.T @ (self.Uty - st.g)
        if self.prior.is_flat:
            st.Sigma_beta = self.XtX_inv * s
            st.mu_beta = self.XtX_inv @ Xtd
        else:
            st.Sigma_beta = _spd_inverse(self.XtX / s + self.prec_prior, "q(beta) precision")
            st.mu_beta = st.Sigma_beta @ (Xtd / s + self.prec_prior @ self.prior.mu)

    def objective(self, st) -> float:
        prior_quad = 0.0
        if not self.prior.is_flat:
            diff = st.mu_beta - self.prior.mu
            prior_quad = (float(np.sum(self.prec_prior * st.Sigma_beta))
                          + float(diff @ self.prec_prior @ diff))
        return _objective(
            self.prior, self.data.n, s=st.s, t=st.t,
            logdet_beta=_logdet(st.Sigma_beta, "Sigma_beta"),
            logdet_h=float(np.sum(np.log(st.d))),
            D_sigma=self._D_sigma(st), D_tau=self._D_tau(st),
            prior_quad=prior_quad)

    def sweep(self, st):
        self.update_sigma2(st)
        self.update_tau(st)
        self.update_h(st)
        self.update_beta(st)


# -------------------------------------------------------------------- fit


def fit(data: Dataset, prior: PriorSpec, K: KernelMatrix,
        config: Optional[FitConfig] = None, *, method: str = "spectral",
        initial: Optional[VariationalPosterior] = None) -> FitResult:
    """Run coordinate ascent until the objective settles.

    Every sweep updates q(sigma^2), q(tau), q(h), q(beta) in that order and
    then records the objective. The loop stops at the first sweep past
    ``burn_in`` whose objective change is below ``config.tolerance`` or
    after ``max_iterations`` sweeps.

    Raises:
        FitError: the objective became non-finite. The trace is attached.
    """
    config = config or FitConfig()
    if method not in ("spectral", "dense"):
        raise InputError(f"unknown method {method!r}")
    state = initial if initial is not None else initial_posterior(
        data, prior, K, config.init_strategy)
    trace = ConvergenceTrace(criterion=config.tolerance, burn_in=config.burn_in)
    values = trace.objective_values

    if method == "spectral":
        sweeper = _SpectralSweeper(data, prior, K)
        st = sweeper.from_posterior(state)
        step = lambda: sweeper.sweep(st)  # noqa: E731
        objective = lambda: sweeper.objective(st)  # noqa: E731
    else:
        holder = [state]

        def step():
            holder[0] = sweep(holder[0], data, prior, K)

        def objective():
            return kl_objective(holder[0], data, prior, K)

    with np.errstate(all="ignore"):
        for it in range(1, config.max_iterations + 1):
            try:
                step()
                value = objective()
            except (NumericalError, FloatingPointError, ValueError) as exc:
                raise FitError(f"fit failed at sweep {it}: {exc}", trace) from exc
            if not np.isfinite(value):
                raise FitError(f"objective became non-finite at sweep {it}", trace)
            values.append(value)
            if (it > config.burn_in and len(values) > 1
                    and abs(values[-1] - values[-2]) < config.tolerance):
                trace.converged = True
                break

    post = sweeper.to_posterior(st) if method == "spectral" else holder[0]
    return FitResult(posterior=post, trace=trace,
                     sigma2_map=sinvchi2_mode(post.nu_sigma_q, post.scale_sigma_q),
                     prior_used=prior)


def frozen_scale_means(state: VariationalPosterior, data: Dataset, prior: PriorSpec,
                       K: KernelMatrix, *, rtol: float = 1e-13,
                       max_sweeps: int = 200_000) -> VariationalPosterior:
    """Alternate the h and beta updates with both variance scales held fixed.

    This is block Gauss-Seidel on the joint Gaussian for ``(h, beta)``, so the
    means converge to that Gaussian's mean. Iteration stops when neither mean
    moves by more than ``rtol`` relative to its size.
    """
    for _ in range(max_sweeps):
        mu_h, Sigma_h = update_h(state, data, K)
        state = replace(state, mu_h=mu_h, Sigma_h=Sigma_h)
        mu_beta, Sigma_beta = update_beta(state, data, prior)
        moved = np.max(np.abs(mu_beta - state.mu_beta)) / max(np.max(np.abs(mu_beta)), 1e-300)
        state = replace(state, mu_beta=mu_beta, Sigma_beta=Sigma_beta)
        if moved <= rtol:
            return state
    raise FitError(f"frozen-scale iteration did not settle in {max_sweeps} sweeps")
