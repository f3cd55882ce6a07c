"""Mean-field variational inference for Bayesian kernel machine regression."""

__version__ = "0.1.0"

from .elicitation import OlsSummary, elicit_priors, ols, ols_arrays, prior_from_ols
from .engine import (FitConfig, FitResult, fit, initial_posterior, kl_objective,
                     update_beta, update_h, update_sigma2, update_tau)
from .errors import (BkmrError, ElicitationError, FitError, InputError,
                     NumericalError)
from .gls import GlsResult, gls_correct, gls_intervals
from .kernel import KernelMatrix, build_kernel, kernel_solve, nearest_pd, quadratic_kernel
from .model import (ConvergenceTrace, Dataset, Intervals, PriorSpec,
                    VariationalPosterior, sinvchi2_mean_inverse, sinvchi2_mode,
                    wald_intervals)

__all__ = [
    "BkmrError", "ConvergenceTrace", "Dataset", "ElicitationError", "FitConfig",
    "FitError", "FitResult", "GlsResult", "InputError", "Intervals", "KernelMatrix",
    "NumericalError", "OlsSummary", "PriorSpec", "VariationalPosterior",
    "build_kernel", "elicit_priors", "fit", "gls_correct", "gls_intervals",
    "initial_posterior", "kernel_solve", "kl_objective", "nearest_pd", "ols",
    "ols_arrays", "prior_from_ols",
    "quadratic_kernel", "sinvchi2_mean_inverse", "sinvchi2_mode", "update_beta",
    "update_h", "update_sigma2", "update_tau", "wald_intervals",
]
