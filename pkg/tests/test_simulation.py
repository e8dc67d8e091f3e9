"""Tests for synthetic model generation and simulation."""

import numpy as np
import pytest

from slrid.metrics import cod1
from slrid.estimator import predict_one_step
from slrid.simulation import (
    SimConfig,
    gen_generic_model,
    gen_sl_model,
    simulate,
)
from slrid.simulation import _companion_spectral_radius


class TestModelGeneration:
    def test_seed_determinism(self):
        a = gen_sl_model(4, 1, 5, seed=42)
        b = gen_sl_model(4, 1, 5, seed=42)
        np.testing.assert_allclose(a.sparse_coeffs, b.sparse_coeffs, rtol=0, atol=0)
        np.testing.assert_allclose(a.F, b.F, rtol=0, atol=0)
        np.testing.assert_allclose(a.factor_coeffs, b.factor_coeffs, rtol=0, atol=0)
        c = gen_sl_model(4, 1, 5, seed=43)
        assert not np.array_equal(a.sparse_coeffs, c.sparse_coeffs)

    def test_support_size_and_structure(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            p = int(rng.integers(2, 6))
            s = int(rng.integers(0, p * p + 1))
            n = int(rng.integers(0, p + 1))
            m = gen_sl_model(p, n, s, seed=int(rng.integers(1 << 30)))
            assert len(m.support) == s
            assert m.F.shape == (p, n)
            if n > 0:
                np.testing.assert_allclose(
                    np.linalg.norm(m.F, axis=0), np.ones(n), rtol=1e-12
                )

    def test_lowrank_part_has_requested_rank(self):
        m = gen_sl_model(5, 2, 0, seed=7)
        G = m.coeffs().coeffs  # pure low-rank here
        stack = np.concatenate(list(G), axis=1)
        assert np.linalg.matrix_rank(stack, tol=1e-10) == 2

    def test_generic_model_dense(self):
        m = gen_generic_model(3, seed=11)
        assert m.kind == "generic"
        assert m.n == 0
        assert len(m.support) == 9

    def test_stability_cap_honoured(self):
        for seed in range(10):
            m = gen_sl_model(4, 1, 6, seed=seed)
            rho = _companion_spectral_radius(m.coeffs().coeffs)
            assert rho <= SimConfig().spectral_radius_cap + 1e-9

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            gen_sl_model(3, 4, 2, seed=0)
        with pytest.raises(ValueError):
            gen_sl_model(3, 1, 10, seed=0)
        with pytest.raises(ValueError):
            SimConfig(pole_modulus_max=1.5)
        with pytest.raises(ValueError):
            SimConfig(damping=0.0)

    def test_custom_noise_covariance(self):
        Sigma = np.array([[2.0, 0.5], [0.5, 1.0]])
        m = gen_sl_model(2, 0, 2, seed=3, Sigma=Sigma)
        np.testing.assert_allclose(m.Sigma, Sigma, rtol=1e-15)


class TestSimulate:
    def test_seed_determinism(self):
        m = gen_sl_model(3, 1, 3, seed=5)
        y1 = simulate(m, 100, seed=9)
        y2 = simulate(m, 100, seed=9)
        np.testing.assert_allclose(y1.values, y2.values, rtol=0, atol=0)
        y3 = simulate(m, 100, seed=10)
        assert not np.array_equal(y1.values, y3.values)

    def test_shapes(self):
        m = gen_generic_model(2, seed=1)
        y = simulate(m, 64, seed=2)
        assert y.values.shape == (64, 2)

    def test_innovation_covariance_recovered(self):
        """Residuals of the true predictor match Sigma statistically."""
        Sigma = np.array([[1.0, 0.4], [0.4, 2.0]])
        m = gen_sl_model(2, 1, 2, seed=21, Sigma=Sigma)
        y = simulate(m, 10000, seed=22)
        resid = y.values - predict_one_step(m.coeffs(), y)
        resid = resid[m.T_true :]  # initial rows lack full lag history
        Shat = resid.T @ resid / resid.shape[0]
        assert np.linalg.norm(Shat - Sigma) / np.linalg.norm(Sigma) < 0.05

    def test_cod1_approaches_noise_floor(self):
        """The true predictor explains all variance except the innovations."""
        m = gen_sl_model(3, 1, 4, seed=31)
        y = simulate(m, 10000, seed=32)
        pred = predict_one_step(m.coeffs(), y)
        got = cod1(y.values, pred)
        centered = y.values - y.values.mean(axis=0)
        limit = 1.0 - np.trace(m.Sigma) / (np.sum(centered**2) / y.N)
        assert abs(got - limit) < 0.05
        assert got > 0.0

    def test_burn_in_changes_window(self):
        m = gen_sl_model(2, 0, 2, seed=41)
        y_default = simulate(m, 50, seed=42)
        y_none = simulate(m, 50, seed=42, burn_in=0)
        assert not np.array_equal(y_default.values, y_none.values)
        # zero burn-in keeps the zero-initial-condition transient
        assert abs(y_none.values[0]).max() < abs(y_none.values).max()

    def test_rejects_bad_N(self):
        m = gen_sl_model(2, 0, 1, seed=51)
        with pytest.raises(ValueError):
            simulate(m, 0, seed=1)
