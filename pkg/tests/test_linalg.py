"""Dense symmetric primitives and matrix functions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phipca.exceptions import DegeneracyError, DomainError, ParameterError, ValidationError
from phipca.linalg import (
    SpectralDecomp,
    as_symmetric,
    commutation_matrix,
    eigh,
    gaussian_fourth_moment,
    matrix_exp,
    matrix_log,
    matrix_phi,
    pinv_shift,
    principal_singulars,
)
from phipca.phi import AM, GM, HM, Power


def random_orthogonal(p, seed):
    Q, R = np.linalg.qr(np.random.default_rng(seed).standard_normal((p, p)))
    return Q * np.sign(np.diag(R))


def random_spd(p, seed, low=0.2, high=5.0):
    rng = np.random.default_rng(seed)
    Q = random_orthogonal(p, seed + 1)
    return (Q * rng.uniform(low, high, p)) @ Q.T


class TestSymmetric:
    def test_symmetrizes_rounding(self):
        A = np.array([[1.0, 2.0], [2.0 + 1e-12, 3.0]])
        S = as_symmetric(A)
        assert np.array_equal(S, S.T)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            as_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValidationError):
            as_symmetric(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValidationError):
            as_symmetric(np.ones((2, 3)))


class TestEigh:
    def test_identity(self):
        dec = eigh(np.eye(3))
        np.testing.assert_allclose(dec.values, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(dec.reconstruct(), np.eye(3), atol=1e-12)

    def test_diagonal_gives_signed_permutation(self):
        dec = eigh(np.diag([1.0, 5.0, 2.0]))
        np.testing.assert_allclose(dec.values, [5.0, 2.0, 1.0])
        np.testing.assert_allclose(np.abs(dec.vectors), np.eye(3)[:, [1, 2, 0]], atol=1e-14)

    def test_round_trip_recovers_spectrum(self):
        Q = random_orthogonal(2, 3)
        dec = eigh((Q * [3.0, 1.0]) @ Q.T)
        np.testing.assert_allclose(dec.values, [3.0, 1.0], atol=1e-10)

    def test_sign_convention(self):
        dec = eigh(random_spd(6, 11))
        idx = np.argmax(np.abs(dec.vectors), axis=0)
        assert np.all(dec.vectors[idx, np.arange(6)] > 0)

    def test_bitwise_deterministic(self):
        A = random_spd(8, 5)
        d1, d2 = eigh(A), eigh(A.copy())
        assert np.array_equal(d1.values, d2.values)
        assert np.array_equal(d1.vectors, d2.vectors)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=10_000))
    def test_invariants(self, p, seed):
        A = np.random.default_rng(seed).standard_normal((p, p)) * 3
        A = A + A.T
        dec = eigh(A)
        assert np.all(np.diff(dec.values) <= 0)
        np.testing.assert_allclose(dec.vectors.T @ dec.vectors, np.eye(p), atol=1e-8)
        tol = 1e-8 * max(1.0, np.abs(A).max())
        assert np.abs(dec.reconstruct() - A).max() <= tol

    def test_leading_block(self):
        dec = eigh(np.diag([3.0, 2.0, 1.0]))
        assert dec.leading(2).shape == (3, 2)
        with pytest.raises(ParameterError):
            dec.leading(4)


class TestMatrixPhi:
    @pytest.mark.parametrize("phi", [HM, GM, AM, Power(0.5), Power(2.0)])
    def test_identity(self, phi):
        np.testing.assert_allclose(matrix_phi(np.eye(4), phi), float(phi(1.0)) * np.eye(4), atol=1e-14)

    def test_diagonal_power(self):
        np.testing.assert_allclose(matrix_phi(np.diag([4.0, 1.0]), 0.5), np.diag([2.0, 1.0]), atol=1e-14)

    def test_inverse_round_trip(self):
        A = np.diag([3.0, 2.0, 0.5])
        np.testing.assert_allclose(matrix_phi(matrix_phi(A, -1.0), -1.0), A, atol=1e-8)

    def test_domain_error_names_index(self):
        with pytest.raises(DomainError, match="eigenvalue 1"):
            matrix_phi(np.diag([2.0, 0.0]), HM)
        with pytest.raises(DomainError):
            matrix_log(np.diag([1.0, -1.0]))

    def test_positive_power_accepts_psd(self):
        np.testing.assert_allclose(matrix_phi(np.diag([4.0, 0.0]), 0.5), np.diag([2.0, 0.0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=2, max_value=8), st.integers(0, 5000), st.sampled_from([-1.0, 0.5, 1.0, 2.0, "log"]))
    def test_commutes_and_shares_eigenvectors(self, p, seed, beta):
        A = random_spd(p, seed)
        F = matrix_phi(A, beta)
        assert np.abs(A @ F - F @ A).max() <= 1e-8 * max(1.0, np.abs(A @ F).max())


class TestLogExp:
    def test_log_identity(self):
        np.testing.assert_allclose(matrix_log(np.eye(3)), np.zeros((3, 3)), atol=1e-15)

    def test_exp_zero(self):
        np.testing.assert_allclose(matrix_exp(np.zeros((3, 3))), np.eye(3))

    def test_log_diagonal(self):
        np.testing.assert_allclose(matrix_log(np.diag([math.e, math.e**2])), np.diag([1.0, 2.0]), atol=1e-14)

    def test_round_trip(self):
        A = random_spd(5, 2)
        np.testing.assert_allclose(matrix_exp(matrix_log(A)), A, atol=1e-8)


class TestPinvShift:
    def test_two_by_two(self):
        np.testing.assert_allclose(pinv_shift(eigh(np.diag([3.0, 1.0])), 0), np.diag([0.0, 0.5]), atol=1e-15)

    def test_three_by_three_middle(self):
        np.testing.assert_allclose(pinv_shift(eigh(np.diag([4.0, 2.0, 1.0])), 1), np.diag([-0.5, 0.0, 1.0]), atol=1e-15)

    def test_null_space_and_pseudo_inverse(self):
        A = random_spd(5, 7)
        dec = eigh(A)
        for j in range(5):
            M = pinv_shift(dec, j)
            g = dec.vectors[:, j]
            np.testing.assert_allclose(M @ g, 0.0, atol=1e-10)
            np.testing.assert_allclose(M @ (dec.values[j] * np.eye(5) - A), np.eye(5) - np.outer(g, g), atol=1e-8)

    def test_near_tie_raises(self):
        with pytest.raises(DegeneracyError):
            pinv_shift(SpectralDecomp(np.array([2.0, 2.0, 1.0]), np.eye(3)), 0)


class TestPrincipalSingulars:
    def test_identical(self):
        G = random_orthogonal(5, 1)[:, :2]
        np.testing.assert_allclose(principal_singulars(G, G), [1.0, 1.0])

    def test_orthogonal(self):
        I = np.eye(4)
        np.testing.assert_allclose(principal_singulars(I[:, 2:], I[:, :2]), [0.0, 0.0], atol=1e-15)

    def test_angle(self):
        th = math.pi / 6
        Bq = np.array([[math.cos(th)], [math.sin(th)], [0.0]])
        Gr = np.array([[1.0], [0.0], [0.0]])
        np.testing.assert_allclose(principal_singulars(Bq, Gr), [math.cos(th)])

    def test_rotation_invariance(self):
        Q = random_orthogonal(6, 4)
        Bq, Gr = Q[:, :3], random_orthogonal(6, 9)[:, :2]
        R = random_orthogonal(3, 2)
        np.testing.assert_allclose(principal_singulars(Bq @ R, Gr), principal_singulars(Bq, Gr), atol=1e-8)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValidationError):
            principal_singulars(np.ones((3, 1)), np.eye(3)[:, :1])

    def test_needs_q_at_least_r(self):
        with pytest.raises(ValidationError):
            principal_singulars(np.eye(3)[:, :1], np.eye(3)[:, :2])


class TestFourthMoment:
    def test_scalar(self):
        assert commutation_matrix(1).tolist() == [[1.0]]
        np.testing.assert_allclose(gaussian_fourth_moment(np.array([[2.0]])), [[8.0]])

    @pytest.mark.parametrize("p", [2, 3, 5])
    def test_commutation(self, p):
        K = commutation_matrix(p)
        np.testing.assert_array_equal(K @ K, np.eye(p * p))
        A = np.arange(p * p, dtype=float).reshape(p, p)
        np.testing.assert_array_equal(K @ A.reshape(-1, order="F"), A.T.reshape(-1, order="F"))

    def test_symmetric_psd(self):
        V = gaussian_fourth_moment(random_spd(3, 0))
        np.testing.assert_allclose(V, V.T, atol=1e-12)
        assert np.linalg.eigvalsh(V).min() > -1e-10

    def test_monte_carlo_identity(self):
        X = np.random.default_rng(0).standard_normal((1_000_000, 2))
        outer = np.einsum("ni,nj->nij", X, X).reshape(-1, 4)
        mc = np.cov(outer.T)
        V = gaussian_fourth_moment(np.eye(2))
        assert np.linalg.norm(mc - V) / np.linalg.norm(V) < 0.02

    def test_size_guard(self):
        with pytest.raises(ParameterError):
            commutation_matrix(51)
