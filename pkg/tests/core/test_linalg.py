import numpy as np
import pytest
import torch

from src.core.exceptions import InvalidArgumentError, NumericalFailureError
from src.core.linalg import cholesky, sample_mvn, softplus, softplus_inverse
from src.core.rng import SeededRng


def test_cholesky_reconstructs_spd_matrix():
    A = np.array([[4.0, 2.0], [2.0, 3.0]])
    L = cholesky(A)
    np.testing.assert_allclose(L @ L.T, A, atol=1e-14)
    assert np.all(np.triu(L, 1) == 0)


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(5)), np.eye(5))


def test_cholesky_escalates_jitter_for_singular_matrix(caplog):
    A = np.ones((3, 3))
    L = cholesky(A)
    assert np.all(np.isfinite(L))
    np.testing.assert_allclose(L @ L.T, A, atol=1e-5)
    assert "jitter" in caplog.text


def test_cholesky_reports_failing_pivot():
    A = np.diag([1.0, -1.0, 1.0])
    with pytest.raises(NumericalFailureError) as info:
        cholesky(A)
    assert info.value.pivot == 1


def test_cholesky_rejects_asymmetric_input():
    with pytest.raises(InvalidArgumentError):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_rejects_non_square_input():
    with pytest.raises(InvalidArgumentError):
        cholesky(np.ones((2, 3)))


def test_softplus_is_stable_at_extremes():
    assert softplus(0.0) == pytest.approx(np.log(2.0), abs=1e-15)
    assert softplus(800.0) == 800.0
    assert softplus(-800.0) == pytest.approx(0.0, abs=1e-300)
    assert softplus(-800.0) >= 0.0


def test_softplus_inverse_round_trip():
    x = np.array([-5.0, -1.0, 0.0, 1.0, 30.0])
    np.testing.assert_allclose(softplus_inverse(softplus(x)), x, rtol=1e-12, atol=1e-12)
    assert softplus(softplus_inverse(1.0)) == pytest.approx(1.0, abs=1e-15)


def test_softplus_tensor_matches_array():
    x = np.linspace(-10, 10, 21)
    np.testing.assert_allclose(softplus(torch.tensor(x)).numpy(), softplus(x), rtol=1e-14)


def test_sample_mvn_moments():
    A = np.array([[1.0, 0.6], [0.6, 2.0]])
    draws = sample_mvn(np.array([1.0, -1.0]), cholesky(A), SeededRng(3), size=200_000)
    np.testing.assert_allclose(draws.mean(axis=0), [1.0, -1.0], atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), A, atol=0.03)


def test_sample_mvn_rejects_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        sample_mvn(np.zeros(3), np.eye(2), SeededRng(0))
