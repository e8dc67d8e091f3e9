"""Closed-form posterior estimation and one-step prediction.

Given Gaussian priors theta_s ~ N(0, K_S), theta_l ~ N(0, K_L) and innovation
covariance Sigma, the posterior means solve a regularized least squares whose
dual variable lives in the pN-dimensional output space:

    c = V^-1 y_plus,      V = Phi (K_S + K_L) Phi^T + Sigma kron I_N
    theta_s = K_S Phi^T c,  theta_l = K_L Phi^T c.

Working in the dual keeps rank-deficient kernels (exact zeros in gamma,
low-rank channel covariances) well defined without any pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import NotSPDError, chol_logdet, chol_solve, spd_factor, sym
from .regressor import (
    CoefficientTensor,
    RegressionProblem,
    ThetaVector,
    TimeSeries,
    lagged_regressor,
)

__all__ = [
    "PosteriorEstimate",
    "NotSPDError",
    "posterior_estimate",
    "estimate_noise_cov",
    "predict_one_step",
]


@dataclass(frozen=True)
class PosteriorEstimate:
    """Posterior means of the two components plus the dual solve byproducts."""

    theta_s: ThetaVector
    theta_l: ThetaVector
    dual: np.ndarray
    nll: float

    @property
    def theta(self) -> ThetaVector:
        """Posterior mean of the full predictor, sparse plus low-rank."""
        return ThetaVector(self.theta_s.p, self.theta_s.T, self.theta_s.data + self.theta_l.data)


def _noise_cov_blocks(Sigma: np.ndarray, N: int) -> np.ndarray:
    return np.kron(Sigma, np.eye(N))


def posterior_estimate(
    prob: RegressionProblem, K_S: np.ndarray, K_L: np.ndarray
) -> PosteriorEstimate:
    """Posterior means under the given component covariances.

    Either kernel may be identically zero or rank deficient.  Raises
    NotSPDError when the output covariance V fails to be positive definite,
    which signals invalid hyperparameters (for instance a non-PSD kernel).
    """
    d = prob.Phi.shape[1]
    K_S = np.zeros((d, d)) if K_S is None else np.asarray(K_S, dtype=float)
    K_L = np.zeros((d, d)) if K_L is None else np.asarray(K_L, dtype=float)
    if K_S.shape != (d, d) or K_L.shape != (d, d):
        raise ValueError("kernel shape does not match the coefficient count")
    K = K_S + K_L
    V = prob.Phi @ K @ prob.Phi.T
    V = sym(V) + _noise_cov_blocks(prob.Sigma, prob.N)
    L = spd_factor(V)
    c = chol_solve(L, prob.yplus)
    w = prob.Phi.T @ c
    nll = 0.5 * chol_logdet(L) + 0.5 * float(prob.yplus @ c)
    p, T = prob.p, prob.T
    return PosteriorEstimate(
        theta_s=ThetaVector(p, T, K_S @ w),
        theta_l=ThetaVector(p, T, K_L @ w),
        dual=c,
        nll=nll,
    )


def estimate_noise_cov(ts: TimeSeries, arx_order: int | None = None) -> np.ndarray:
    """Innovation covariance from a least-squares vector autoregression.

    Fits y(t) = sum_k A_k y(t-k) + e(t) by ordinary least squares with zero
    initial conditions, then returns the residual covariance E^T E / N
    (symmetrized).  The default order is min(20, N // (4 p)); order 0 reduces
    to the raw second-moment matrix of the data.
    """
    Y = ts.values
    N, p = Y.shape
    if arx_order is None:
        arx_order = min(20, N // (4 * p))
    if arx_order < 0:
        raise ValueError("arx_order must be nonnegative")
    if arx_order == 0:
        return sym(Y.T @ Y / N)
    if N <= arx_order:
        raise ValueError(f"need more than arx_order={arx_order} samples, got {N}")
    R = np.hstack([lagged_regressor(Y[:, j], arx_order) for j in range(p)])
    coef, *_ = np.linalg.lstsq(R, Y, rcond=None)
    E = Y - R @ coef
    return sym(E.T @ E / N)


def predict_one_step(coeffs: CoefficientTensor, ts: TimeSeries) -> np.ndarray:
    """One-step-ahead predictions on a sample, using only past samples.

    Returns an N x p array; lags reaching before the first sample contribute
    zero, so the first prediction is 0 for every channel.
    """
    Y = ts.values
    N, p = Y.shape
    if p != coeffs.p:
        raise ValueError("channel count mismatch between coefficients and data")
    Yhat = np.zeros_like(Y)
    for k in range(1, min(coeffs.T, N - 1) + 1):
        Yhat[k:] += Y[:-k] @ coeffs.coeffs[k - 1].T
    return Yhat
