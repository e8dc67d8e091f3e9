"""Tests for the maximum-entropy kernel constructions."""

import numpy as np
import pytest
from scipy.signal import lfilter

from slrid.kernels import (
    BaseKernelParams,
    LowRankPrior,
    build_base_kernel,
    build_lowrank_kernel_type1,
    build_lowrank_kernel_type2,
    build_sparse_kernel,
    is_psd,
    resonance_filter,
)


def random_spd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T + n * np.eye(n))


def random_orthonormal(rng, p, n):
    q, _ = np.linalg.qr(rng.standard_normal((p, max(n, 1))))
    return q[:, :n]


class TestBaseKernel:
    def test_tc_hand_value(self):
        """beta^max(t,s) over lags 1..2 at beta = 0.5."""
        P = build_base_kernel(BaseKernelParams(0.5), 2)
        np.testing.assert_allclose(P, [[0.5, 0.25], [0.25, 0.25]], rtol=0, atol=0)

    def test_ss2_hand_value(self):
        # beta^(t+s+max)/2 - beta^(3 max)/6 at beta = 0.5
        P = build_base_kernel(BaseKernelParams(0.5, family="SS2"), 2)
        expect = np.array([[1 / 24, 5 / 384], [5 / 384, 1 / 192]])
        np.testing.assert_allclose(P, expect, rtol=1e-15)

    def test_tc_diagonal_decays(self):
        P = build_base_kernel(BaseKernelParams(0.7), 10)
        d = np.diag(P)
        assert np.all(np.diff(d) < 0)

    def test_filter_conjugation_matches_direct_product(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            T = int(rng.integers(1, 9))
            params = BaseKernelParams(
                beta_ss=rng.uniform(0.2, 0.95),
                rho=rng.uniform(0.1, 0.9),
                omega=rng.uniform(0.0, np.pi),
                family=rng.choice(["TC", "SS2"]),
            )
            P = build_base_kernel(params, T)
            base = build_base_kernel(
                BaseKernelParams(params.beta_ss, family=params.family), T
            )
            f = resonance_filter(T, params.rho, params.omega)
            F = np.zeros((T, T))
            for i in range(T):
                F[i, : i + 1] = f[i::-1]
            np.testing.assert_allclose(P, F @ base @ F.T, rtol=1e-12, atol=1e-15)

    def test_psd_over_random_parameters(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            params = BaseKernelParams(
                beta_ss=rng.uniform(0.05, 0.99),
                rho=rng.uniform(0.0, 0.95),
                omega=rng.uniform(0.0, np.pi),
                family=rng.choice(["TC", "SS2"]),
            )
            P = build_base_kernel(params, int(rng.integers(1, 13)))
            assert is_psd(P)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            BaseKernelParams(0.0)
        with pytest.raises(ValueError):
            BaseKernelParams(1.0)
        with pytest.raises(ValueError):
            BaseKernelParams(0.5, rho=1.0)
        with pytest.raises(ValueError):
            BaseKernelParams(0.5, omega=-0.1)
        with pytest.raises(ValueError):
            BaseKernelParams(0.5, family="RBF")
        with pytest.raises(ValueError):
            build_base_kernel(BaseKernelParams(0.5), 0)


class TestResonanceFilter:
    def test_hand_value(self):
        """rho = 0.5, omega = pi/2 gives taps 1, 0, -1/4, 0, 1/16."""
        f = resonance_filter(5, 0.5, np.pi / 2)
        np.testing.assert_allclose(f, [1, 0, -0.25, 0, 0.0625], atol=1e-15)

    def test_identity_when_rho_zero(self):
        f = resonance_filter(6, 0.0, 1.3)
        np.testing.assert_allclose(f, [1, 0, 0, 0, 0, 0], rtol=0, atol=0)

    def test_matches_lfilter_impulse_response(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            T = int(rng.integers(1, 40))
            rho = rng.uniform(0.0, 0.95)
            omega = rng.uniform(0.0, np.pi)
            f = resonance_filter(T, rho, omega)
            impulse = np.zeros(T)
            impulse[0] = 1.0
            ref = lfilter([1.0], [1.0, -2 * rho * np.cos(omega), rho * rho], impulse)
            np.testing.assert_allclose(f, ref, rtol=1e-12, atol=1e-14)


class TestSparseKernel:
    def test_block_diagonal_layout(self):
        rng = np.random.default_rng(5)
        T = 3
        P = random_spd(rng, T)
        gamma = np.array([2.0, 0.0, 1.5, 0.25])
        K = build_sparse_kernel(gamma, P)
        assert K.shape == (4 * T, 4 * T)
        for b, g in enumerate(gamma):
            sl = slice(b * T, (b + 1) * T)
            np.testing.assert_allclose(K[sl, sl], g * P, rtol=1e-15)
        # off-diagonal blocks vanish
        K2 = K.copy()
        for b in range(4):
            sl = slice(b * T, (b + 1) * T)
            K2[sl, sl] = 0.0
        assert np.all(K2 == 0.0)

    def test_zero_gamma_gives_exact_zero_block(self):
        P = build_base_kernel(BaseKernelParams(0.6), 4)
        K = build_sparse_kernel(np.array([0.0, 1.0]), P)
        assert np.all(K[:4, :] == 0.0)
        assert np.all(K[:, :4] == 0.0)

    def test_rejects_bad_gamma(self):
        P = np.eye(2)
        with pytest.raises(ValueError):
            build_sparse_kernel(np.array([-1.0, 1.0]), P)
        with pytest.raises(ValueError):
            build_sparse_kernel(np.array([np.inf, 1.0]), P)
        with pytest.raises(ValueError):
            build_sparse_kernel(np.ones((2, 2)), P)


class TestLowRankPrior:
    def test_matrix_eigenstructure(self):
        rng = np.random.default_rng(13)
        p, n = 5, 2
        U = random_orthonormal(rng, p, n)
        prior = LowRankPrior(alpha=0.3, beta=np.array([2.0, 1.0]), U=U)
        Lam = prior.matrix()
        w = np.sort(np.linalg.eigvalsh(Lam))
        expect = np.sort(np.r_[np.full(p - n, 0.3), 2.0, 1.0])
        np.testing.assert_allclose(w, expect, atol=1e-12)
        # factor directions are eigenvectors with the requested variances
        np.testing.assert_allclose(Lam @ U, U * np.array([2.0, 1.0]), atol=1e-12)

    def test_rank_zero_is_scaled_identity(self):
        prior = LowRankPrior(alpha=0.7, beta=np.zeros(0), U=np.zeros((3, 0)))
        np.testing.assert_allclose(prior.matrix(), 0.7 * np.eye(3), rtol=0, atol=0)

    def test_validation(self):
        rng = np.random.default_rng(1)
        U = random_orthonormal(rng, 4, 2)
        with pytest.raises(ValueError):
            LowRankPrior(alpha=-0.1, beta=np.ones(2), U=U)
        with pytest.raises(ValueError):
            LowRankPrior(alpha=0.1, beta=-np.ones(2), U=U)
        with pytest.raises(ValueError):
            LowRankPrior(alpha=0.1, beta=np.ones(3), U=U)
        with pytest.raises(ValueError):
            LowRankPrior(alpha=0.1, beta=np.ones(2), U=np.ones((4, 2)))
        with pytest.raises(ValueError):
            LowRankPrior(alpha=0.1, beta=np.ones(5), U=np.eye(5)[:4, :])


class TestLowRankKernelType1:
    def test_scalar_hand_value(self):
        """p = T = 1, P = 1, lam = 2, Lam = 1: K = (2 + 1)^-1 = 1/3."""
        K = build_lowrank_kernel_type1(2.0, np.array([[1.0]]), np.array([[1.0]]))
        np.testing.assert_allclose(K, [[1 / 3]], rtol=1e-14)

    def test_matches_woodbury_inverse_for_nonsingular_lam(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            p = int(rng.integers(1, 4))
            T = int(rng.integers(1, 5))
            lam = rng.uniform(0.2, 5.0)
            P = random_spd(rng, T, scale=0.5)
            Lam = random_spd(rng, p, scale=0.5)
            K = build_lowrank_kernel_type1(lam, Lam, P)
            direct = np.linalg.inv(
                lam * np.kron(np.eye(p * p), np.linalg.inv(P))
                + np.kron(np.linalg.inv(Lam), np.eye(p * T))
            )
            np.testing.assert_allclose(K, direct, rtol=1e-8, atol=1e-12)

    def test_psd_for_singular_lam(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            p = int(rng.integers(2, 5))
            n = int(rng.integers(1, p))
            T = int(rng.integers(1, 4))
            U = random_orthonormal(rng, p, n)
            Lam = LowRankPrior(0.0, rng.uniform(0.5, 2.0, n), U).matrix()
            P = random_spd(rng, T, scale=0.3)
            K = build_lowrank_kernel_type1(rng.uniform(0.5, 3.0), Lam, P)
            assert is_psd(K)

    def test_vanishes_on_null_channel_directions(self):
        """Output channels with zero prior variance get exactly no factor mass."""
        rng = np.random.default_rng(23)
        p, n, T = 3, 1, 2
        U = random_orthonormal(rng, p, n)
        Lam = LowRankPrior(0.0, np.array([1.5]), U).matrix()
        P = random_spd(rng, T)
        K = build_lowrank_kernel_type1(1.0, Lam, P)
        # null(Lam) spans the complement of U
        comp = np.linalg.svd(U)[0][:, n:]
        V = np.kron(comp, np.eye(p * T))
        np.testing.assert_allclose(V.T @ K @ V, 0.0, atol=1e-10)

    def test_rejects_bad_inputs(self):
        P = np.eye(2)
        with pytest.raises(ValueError):
            build_lowrank_kernel_type1(0.0, np.eye(2), P)
        with pytest.raises(ValueError):
            build_lowrank_kernel_type1(1.0, np.array([[1.0, 0.5], [0.4, 1.0]]), P)


class TestLowRankKernelType2:
    def test_kron_layout(self):
        rng = np.random.default_rng(29)
        p, T = 3, 2
        Lam = random_spd(rng, p)
        P = random_spd(rng, T)
        K = build_lowrank_kernel_type2(Lam, P)
        expect = np.zeros((p * p * T, p * p * T))
        for i in range(p):
            for k in range(p):
                for j in range(p):
                    expect[
                        (i * p + j) * T : (i * p + j + 1) * T,
                        (k * p + j) * T : (k * p + j + 1) * T,
                    ] += Lam[i, k] * P
        np.testing.assert_allclose(K, expect, rtol=1e-14)

    def test_rank_multiplies(self):
        rng = np.random.default_rng(31)
        p, n, T = 4, 2, 3
        U = random_orthonormal(rng, p, n)
        Lam = LowRankPrior(0.0, rng.uniform(0.5, 2.0, n), U).matrix()
        P = random_spd(rng, T)
        K = build_lowrank_kernel_type2(Lam, P)
        assert np.linalg.matrix_rank(K, tol=1e-8) == n * p * T

    def test_psd(self):
        rng = np.random.default_rng(37)
        for _ in range(20):
            p = int(rng.integers(1, 5))
            n = int(rng.integers(0, p + 1))
            U = random_orthonormal(rng, p, n)
            Lam = LowRankPrior(rng.uniform(0, 1), rng.uniform(0, 2, n), U).matrix()
            P = build_base_kernel(BaseKernelParams(rng.uniform(0.2, 0.9)), 3)
            assert is_psd(build_lowrank_kernel_type2(Lam, P))
