"""Evaluation metrics: model complexity, prediction fit, impulse-response fit."""

from __future__ import annotations

import numpy as np

__all__ = ["complexity", "cod1", "impulse_response_fit"]


def complexity(s: int, n: int, m: int, T: int | None = None) -> float:
    """Asymptotic parameter count of a sparse-plus-low-rank model, normalized.

    A model with s active sparse blocks and n factors over m channels uses
    s*T + m*n*(T+1) parameters at lag horizon T; per channel pair and lag this
    tends to (s + m*n) / m^2 as T grows, which is what is returned.  s = m^2,
    n = 0 (a dense unstructured model) gives 1; a pure sparse model gives
    s / m^2.  T is accepted for interface symmetry and only validated.
    """
    if m < 1:
        raise ValueError("m must be positive")
    if s < 0 or n < 0:
        raise ValueError("s and n must be nonnegative")
    if T is not None and T < 1:
        raise ValueError("T must be positive when given")
    return (s + m * n) / (m * m)


def cod1(y_test: np.ndarray, y_pred: np.ndarray) -> float:
    """One-step-ahead coefficient of determination on a test sample.

    1 - sum_t ||y(t) - yhat(t)||^2 / sum_t ||y(t) - ybar||^2 with ybar the
    test-sample mean.  1 is perfect prediction; 0 matches predicting the
    mean; negative is worse than that.  Raises when the test sample has zero
    variance.
    """
    y_test = np.asarray(y_test, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_test.shape != y_pred.shape:
        raise ValueError("y_test and y_pred must have the same shape")
    ybar = y_test.mean(axis=0, keepdims=True)
    denom = float(np.sum((y_test - ybar) ** 2))
    if denom == 0.0:
        raise ValueError("test sample has zero variance")
    num = float(np.sum((y_test - y_pred) ** 2))
    return 1.0 - num / denom


def impulse_response_fit(G_true: np.ndarray, G_hat: np.ndarray) -> float:
    """Percentage fit of the estimated impulse-response sequence.

    100 * (1 - sqrt(sum_k ||G_k - Ghat_k||_F^2 / sum_k ||G_k - Gbar||_F^2))
    where Gbar is the lag average of the true sequence.  100 means exact
    recovery; the score is negative when the estimate is worse than the
    trivial constant sequence.  Raises when the true sequence is constant
    across lags (degenerate denominator).
    """
    G_true = np.asarray(G_true, dtype=float)
    G_hat = np.asarray(G_hat, dtype=float)
    if G_true.shape != G_hat.shape or G_true.ndim != 3:
        raise ValueError("expected two lag tensors of identical shape (T, p, p)")
    Gbar = G_true.mean(axis=0, keepdims=True)
    denom = float(np.sum((G_true - Gbar) ** 2))
    if denom == 0.0:
        raise ValueError("true impulse response is constant across lags")
    num = float(np.sum((G_true - G_hat) ** 2))
    return 100.0 * (1.0 - np.sqrt(num / denom))
