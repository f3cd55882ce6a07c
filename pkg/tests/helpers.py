"""Random instance builders shared by the test modules."""
import numpy as np

from bkmr_vi import Dataset, PriorSpec, build_kernel


def random_dataset(rng, n, p, m=2, noise=1.0):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    Z = rng.standard_normal((n, m))
    h = np.sin(Z[:, 0]) + 0.5 * Z[:, -1] ** 2
    y = X @ rng.normal(0, 2, p) + h + noise * rng.standard_normal(n)
    return Dataset(y, X, Z)


def random_informative_prior(rng, p):
    A = rng.standard_normal((p, p))
    return PriorSpec.informative(
        mu=rng.standard_normal(p), Sigma=A @ A.T + p * np.eye(p),
        nu_sigma=rng.uniform(1, 10), sigma0_sq=rng.uniform(0.2, 3),
        nu_tau=rng.uniform(1, 10), tau0=rng.uniform(0.2, 3))


def random_pd_kernel(rng, n):
    """Well-conditioned PD kernel built from random exposures."""
    Z = rng.standard_normal((n, n + 2)) / np.sqrt(n)
    return build_kernel(Z)


def random_spd(rng, n, ridge=0.5):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + ridge * np.eye(n)


# Acceptance results, printed as a block at the end of the pytest run.
ACCEPTANCE: dict = {}


def record(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE[criterion] = line
    return line
