import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bkmr_vi import Dataset, InputError, PriorSpec, sinvchi2_mean_inverse, sinvchi2_mode, wald_intervals
from bkmr_vi.model import wald_intervals_diag, z_multiplier


@pytest.mark.parametrize("nu, s, expected", [(2, 2, 1.0), (10, 1, 10 / 12), (np.inf, 3.5, 3.5)])
def test_mode_examples(nu, s, expected):
    assert sinvchi2_mode(nu, s) == pytest.approx(expected, rel=1e-15)


def test_mode_approaches_scale_for_large_nu():
    assert sinvchi2_mode(1e12, 4.0) == pytest.approx(4.0, rel=1e-11)


@settings(max_examples=50)
@given(st.floats(1e-3, 1e6), st.floats(1e-3, 1e6))
def test_mode_below_scale(nu, s):
    assert sinvchi2_mode(nu, s) < s


@pytest.mark.parametrize("nu, s, expected", [(5, 4, 0.25), (3, 1, 1.0), (1000, 7.0, 1 / 7.0)])
def test_mean_inverse_examples(nu, s, expected):
    assert sinvchi2_mean_inverse(nu, s) == pytest.approx(expected, rel=1e-15)


def test_scale_functions_reject_nonpositive():
    with pytest.raises(InputError):
        sinvchi2_mode(0, 1)
    with pytest.raises(InputError):
        sinvchi2_mean_inverse(1, -1)


def test_wald_unit():
    iv = wald_intervals([0.0], [[1.0]], 0.95)
    assert iv.lower[0] == -1.96 and iv.upper[0] == 1.96


def test_wald_collapses():
    iv = wald_intervals([5.0], [[1e-300]], 0.95)
    assert iv.lower[0] == pytest.approx(5.0) and iv.upper[0] == pytest.approx(5.0)
    iv = wald_intervals([5.0], [[0.0]], 0.95)
    assert iv.lower[0] == iv.upper[0] == 5.0


def test_wald_diagonal_example():
    iv = wald_intervals([1.0, 2.0], np.diag([4.0, 9.0]))
    np.testing.assert_allclose(iv.lower, [1 - 3.92, 2 - 5.88], rtol=1e-14)
    np.testing.assert_allclose(iv.upper, [1 + 3.92, 2 + 5.88], rtol=1e-14)
    np.testing.assert_allclose(iv.half_width, [3.92, 5.88], rtol=1e-14)


def test_wald_rejects_indefinite_and_bad_level():
    with pytest.raises(InputError):
        wald_intervals([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(InputError):
        wald_intervals([0.0], [[1.0]], 1.0)


def test_other_levels_use_normal_quantile():
    assert z_multiplier(0.90) == pytest.approx(1.6448536269514722, rel=1e-12)


@settings(max_examples=50)
@given(st.floats(-100, 100), st.floats(1e-3, 1e3), st.floats(-50, 50), st.floats(0.1, 10))
def test_wald_equivariance(mu, var, shift, c):
    a = wald_intervals_diag([mu], [var])
    b = wald_intervals_diag([c * mu + shift], [c * c * var])
    assert b.lower[0] == pytest.approx(c * a.lower[0] + shift, rel=1e-9, abs=1e-9)
    assert b.upper[0] == pytest.approx(c * a.upper[0] + shift, rel=1e-9, abs=1e-9)


def test_dataset_invariants():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(5), rng.standard_normal(5)])
    Dataset(rng.standard_normal(5), X, rng.standard_normal((5, 1)))
    with pytest.raises(InputError):
        Dataset(np.ones(3), X[:3], np.ones((3, 1)))  # n < p + 2
    with pytest.raises(InputError):
        Dataset(np.ones(5), np.column_stack([X, 2 * X[:, 1]]), np.ones((5, 1)))
    with pytest.raises(InputError):
        Dataset(np.array([1, 2, np.nan, 4, 5.0]), X, np.ones((5, 1)))


def test_prior_spec_validation_and_round_trip():
    with pytest.raises(InputError):
        PriorSpec("flat", mu=np.zeros(1))
    with pytest.raises(InputError):
        PriorSpec.informative([0.0], [[-1.0]], 1, 1, 1, 1)
    with pytest.raises(InputError):
        PriorSpec.informative([0.0], [[1.0]], 0, 1, 1, 1)
    pr = PriorSpec.informative([1.0, 2.0], np.eye(2), 3, 4, 5, 6)
    back = PriorSpec.from_dict(pr.to_dict())
    assert np.array_equal(back.mu, pr.mu) and np.array_equal(back.Sigma, pr.Sigma)
    assert (back.nu_sigma, back.sigma0_sq, back.nu_tau, back.tau0) == (3, 4, 5, 6)
    assert PriorSpec.from_dict(PriorSpec.flat().to_dict()).is_flat
