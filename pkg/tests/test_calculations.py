"""
Pruebas de utilidades matriciales y flujos aleatorios
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.utils.calculations import (
    exact_covariance, exact_mean, finite_difference_jacobian, is_psd, is_spd, log_norm,
    psd_project, psd_sqrt, rowwise_apply, spd_inv_sqrt, upper_triangle, upper_triangle_labels,
)
from app.utils.rng import StepNoise, StreamFactory


def test_log_norm_of_nilpotent_matrix():
    assert log_norm(np.array([[0.0, 1.0], [0.0, 0.0]])) == pytest.approx(0.5)


def test_psd_project_clips_negative_eigenvalues():
    projected = psd_project(np.diag([1.0, -1.0]))
    assert_allclose(projected, np.diag([1.0, 0.0]), atol=1e-15)


def test_psd_sqrt_and_inverse_sqrt(rng):
    G = rng.standard_normal((3, 3))
    M = G @ G.T + np.eye(3)
    root = psd_sqrt(M)
    assert_allclose(root @ root, M, rtol=1e-12, atol=1e-12)
    assert_allclose(spd_inv_sqrt(M) @ M @ spd_inv_sqrt(M), np.eye(3), atol=1e-10)


def test_definiteness_checks():
    assert is_spd(np.eye(2))
    assert not is_spd(np.diag([1.0, 0.0]))
    assert is_psd(np.diag([1.0, 0.0]))
    assert not is_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_upper_triangle_order():
    M = np.array([[1.0, 2.0], [2.0, 3.0]])
    assert list(upper_triangle(M)) == [1.0, 2.0, 3.0]
    assert upper_triangle_labels("p", 2) == ["p[00]", "p[01]", "p[11]"]


def test_rowwise_apply_matches_matmul(rng):
    M = rng.standard_normal((3, 3))
    X = rng.standard_normal((10, 3))
    assert_allclose(rowwise_apply(M, X), X @ M.T, rtol=1e-12, atol=1e-12)


def test_exact_moments_are_permutation_invariant(rng):
    X = rng.standard_normal((257, 3)) * 1e3 + 1e-3
    perm = rng.permutation(257)
    m = exact_mean(X)
    assert np.array_equal(m, exact_mean(X[perm]))
    assert np.array_equal(exact_covariance(X, m), exact_covariance(X[perm], m))
    assert_allclose(exact_covariance(X, m), np.cov(X, rowvar=False), rtol=1e-10)


def test_single_particle_covariance_is_zero():
    X = np.array([[1.0, 2.0]])
    assert np.array_equal(exact_covariance(X, exact_mean(X)), np.zeros((2, 2)))


def test_finite_difference_jacobian():
    f = lambda x: np.array([x[0] ** 2, x[0] * x[1]])
    assert_allclose(finite_difference_jacobian(f, np.array([1.0, 2.0])), [[2.0, 0.0], [2.0, 1.0]], atol=1e-8)


class TestStreams:
    def test_generators_depend_only_on_key(self):
        a = StreamFactory(5).for_run(3).generator("particles", 10).standard_normal(4)
        factory = StreamFactory(5)
        factory.generator("truth").standard_normal(100)
        b = factory.for_run(3).generator("particles", 10).standard_normal(4)
        assert np.array_equal(a, b)

    def test_roles_and_runs_are_distinct(self):
        factory = StreamFactory(5)
        a = factory.generator("truth").standard_normal(4)
        b = factory.generator("copies").standard_normal(4)
        c = factory.for_run(1).generator("truth").standard_normal(4)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            StreamFactory(-1)

    def test_fingerprint_is_stable(self):
        assert StreamFactory(9).for_run(2).fingerprint() == StreamFactory(9).for_run(2).fingerprint()
        assert StreamFactory(9).for_run(2).fingerprint() != StreamFactory(9).for_run(3).fingerprint()

    def test_step_noise_permutation(self):
        factory = StreamFactory(11)
        perm = np.array([2, 0, 1])
        dW, dV = StepNoise(factory, "particles", 3, 2, 1).draw(4, 0.01)
        pW, pV = StepNoise(factory, "particles", 3, 2, 1, permutation=perm).draw(4, 0.01)
        assert dW.shape == (3, 2) and dV.shape == (3, 1)
        assert np.array_equal(pW, dW[perm])
        assert np.array_equal(pV, dV[perm])

    @pytest.mark.parametrize("small,large", [(1, 5), (3, 50)])
    def test_step_noise_rows_do_not_depend_on_ensemble_size(self, small, large):
        factory = StreamFactory(11)
        for step in (0, 7):
            sW, sV = StepNoise(factory, "particles", small, 2, 1).draw(step, 0.01)
            lW, lV = StepNoise(factory, "particles", large, 2, 1).draw(step, 0.01)
            assert np.array_equal(sW, lW[:small])
            assert np.array_equal(sV, lV[:small])
