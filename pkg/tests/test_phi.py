import math

import mpmath as mp
import numpy as np
import pytest

from pexprk.phi import (
    PhiEvaluationError,
    expm_dense,
    phi_dense_matrices,
    phi_dense_times_e1,
    phi_scalar,
)


def phi_series_scalar(k, z, terms=30):
    """Independent oracle: truncated series sum_i z^i / (k+i)!."""
    return sum(z**i / math.factorial(k + i) for i in range(terms))


def phi_exact_scalar(k, z):
    """Independent oracle in 50-digit arithmetic (series is cancellation-free there)."""
    with mp.workdps(50):
        return float(mp.nsum(lambda i: mp.mpf(z) ** i / mp.factorial(k + i), [0, mp.inf]))


def phi_series_matrix(k, a, terms=40):
    """Independent oracle: truncated series sum_i A^i / (k+i)!."""
    n = a.shape[0]
    term = np.eye(n)
    acc = np.zeros((n, n))
    for i in range(terms):
        acc += term / math.factorial(k + i)
        term = term @ a
    return acc


class TestPhiScalar:
    def test_phi0_at_zero(self):
        assert phi_scalar(0, 0.0) == 1.0

    def test_phi3_at_zero(self):
        assert phi_scalar(3, 0.0) == pytest.approx(1.0 / 6.0, rel=1e-15)

    def test_phi1_at_one_matches_series(self):
        # sum_{i=0}^{30} 1/(1+i)! = e - 1
        expected = phi_series_scalar(1, 1.0, terms=31)
        assert phi_scalar(1, 1.0) == pytest.approx(expected, rel=1e-14)
        assert phi_scalar(1, 1.0) == pytest.approx(1.7182818284590452, rel=1e-14)

    @pytest.mark.parametrize("k", range(0, 7))
    @pytest.mark.parametrize("z", [-20.0, -3.7, -0.49, -1e-3, 1e-3, 0.3, 2.5, 20.0])
    def test_matches_exact_oracle(self, k, z):
        # float64 series would cancel catastrophically at z = -20; the
        # 50-digit oracle does not.
        expected = phi_exact_scalar(k, z)
        assert phi_scalar(k, z) == pytest.approx(expected, rel=1e-13)

    def test_recurrence_property(self):
        # |phi_{k+1}(z) - (phi_k(z) - 1/k!)/z| small for z away from 0
        rng = np.random.default_rng(20240811)
        zs = rng.uniform(-20.0, 20.0, size=200)
        zs = zs[np.abs(zs) > 1e-3]
        for z in zs:
            for k in range(1, 7):
                lhs = phi_scalar(k + 1, z)
                rhs = (phi_scalar(k, z) - 1.0 / math.factorial(k)) / z
                assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_series_branch_near_zero(self):
        for k in range(1, 6):
            for z in [0.0, 1e-12, -1e-9, 0.49, -0.49]:
                assert phi_scalar(k, z) == pytest.approx(
                    phi_series_scalar(k, z, terms=40), rel=1e-14
                )

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            phi_scalar(1, float("nan"))
        with pytest.raises(ValueError):
            phi_scalar(1, float("inf"))
        with pytest.raises(ValueError):
            phi_scalar(-1, 1.0)
        with pytest.raises(ValueError):
            phi_scalar(9, 1.0)


class TestExpmDense:
    def test_zero_matrix(self):
        assert np.allclose(expm_dense(np.zeros((2, 2))), np.eye(2), atol=1e-15)

    def test_diagonal(self):
        e = expm_dense(np.diag([1.0, -2.0]))
        assert np.allclose(e, np.diag([math.e, math.exp(-2.0)]), rtol=1e-13)

    def test_nilpotent_hand_check(self):
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert np.allclose(expm_dense(a), np.array([[1.0, 1.0], [0.0, 1.0]]), atol=1e-15)

    def test_inverse_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a = rng.uniform(-1, 1, size=(6, 6))
            a *= 5.0 / np.linalg.norm(a, 2)
            prod = expm_dense(a) @ expm_dense(-a)
            assert np.max(np.abs(prod - np.eye(6))) <= 1e-12

    def test_overflow_reported(self):
        with pytest.raises(PhiEvaluationError):
            expm_dense(np.diag([1e6, 1e6]))

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            expm_dense(np.zeros((2, 3)))


class TestPhiDenseTimesE1:
    def test_zero_matrix(self):
        cols = phi_dense_times_e1(2, np.zeros((3, 3)))
        e1 = np.array([1.0, 0.0, 0.0])
        assert np.allclose(cols[0], e1 * 1.0, atol=1e-15)
        assert np.allclose(cols[1], e1 * 0.5, atol=1e-15)

    def test_scalar_case(self):
        (w,) = phi_dense_times_e1(1, np.array([[1.0]]))
        assert w[0] == pytest.approx(math.e - 1.0, rel=1e-14)

    def test_random_5x5_matches_series(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(-1, 1, size=(5, 5))
        cols = phi_dense_times_e1(4, a)
        e1 = np.zeros(5)
        e1[0] = 1.0
        for k in range(1, 5):
            expected = phi_series_matrix(k, a, terms=41) @ e1
            assert np.max(np.abs(cols[k - 1] - expected)) <= 1e-12

    def test_matrix_recurrence_consistency(self):
        # column k agrees with phi_k(A) = (phi_{k-1}(A) - I/(k-1)!) A^{-1};
        # the shift keeps A well conditioned so repeated solves stay accurate
        rng = np.random.default_rng(11)
        a = rng.uniform(-1, 1, size=(6, 6)) + 3.0 * np.eye(6)
        assert np.linalg.cond(a) < 50
        cols = phi_dense_times_e1(4, a)
        e1 = np.zeros(6)
        e1[0] = 1.0
        mats = [expm_dense(a)]
        for k in range(1, 5):
            mats.append(np.linalg.solve(a.T, (mats[k - 1] - np.eye(6) / math.factorial(k - 1)).T).T)
        for k in range(1, 5):
            assert np.max(np.abs(cols[k - 1] - mats[k] @ e1)) <= 1e-10


class TestPhiArray:
    def test_against_exact_oracle(self):
        from pexprk.phi import phi_array

        zs = np.array([-5e4, -8600.0, -300.0, -35.0, -5.0, -1.0, -0.51, -0.49,
                       -1e-8, 0.0, 0.3, 0.49, 0.51, 2.0, 30.0, 300.0])
        vals = phi_array(4, zs)
        with mp.workdps(60):
            for i, z in enumerate(zs):
                zm = mp.mpf(z)
                partial = mp.mpf(1)
                term = mp.mpf(1)
                for k in range(1, 5):
                    if z == 0.0:
                        ref = 1.0 / math.factorial(k)
                    else:
                        # residual form is exact at high precision
                        ref = float((mp.exp(zm) - partial) / zm**k)
                    assert vals[i, k - 1] == pytest.approx(ref, rel=5e-14), (z, k)
                    term *= zm / k
                    partial += term

    def test_matches_phi_scalar(self):
        from pexprk.phi import phi_array

        zs = np.linspace(-40.0, 3.0, 57)
        vals = phi_array(6, zs)
        for i, z in enumerate(zs):
            for k in range(1, 7):
                assert vals[i, k - 1] == pytest.approx(phi_scalar(k, z), rel=1e-12)


class TestPhiDenseMatrices:
    def test_against_series(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(-1, 1, size=(4, 4))
        mats = phi_dense_matrices(4, a)
        for k in range(1, 5):
            assert np.max(np.abs(mats[k - 1] - phi_series_matrix(k, a, terms=41))) <= 1e-13

    def test_consistent_with_e1_columns(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-1, 1, size=(5, 5))
        cols = phi_dense_times_e1(3, a)
        mats = phi_dense_matrices(3, a)
        for k in range(3):
            assert np.allclose(cols[k], mats[k][:, 0], atol=1e-13)
