"""Maximum-entropy covariance construction for impulse-response priors.

The predictor coefficients are modelled as a zero-mean Gaussian vector whose
covariance encodes stability (exponentially decaying impulse responses),
optional resonant behaviour, group sparsity across input/output pairs, and a
shared low-rank factor structure across output channels.  This module builds
those covariance matrices; the ordering convention everywhere is

    theta[((i * p) + j) * T + k]  =  coefficient of lag k+1 from input j
                                     to output i   (0-based i, j, k)

so Kronecker factors act as (output channel) x (input channel) x (lag).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._linalg import is_psd, sym

__all__ = [
    "BaseKernelParams",
    "LowRankPrior",
    "resonance_filter",
    "build_base_kernel",
    "build_sparse_kernel",
    "build_lowrank_kernel_type1",
    "build_lowrank_kernel_type2",
    "is_psd",
]


@dataclass(frozen=True)
class BaseKernelParams:
    """Hyperparameters of the scalar lag kernel shared by every coefficient block.

    beta_ss : float
        Exponential decay rate of the stable-spline family, in (0, 1).
    rho, omega : float
        Modulus (in [0, 1)) and phase (in [0, pi]) of the conjugate pole pair
        of the resonance filter shaping the kernel.  rho = 0 disables the
        filter.
    family : str
        "TC" for the first-order stable-spline (tuned/correlated) kernel,
        "SS2" for the second-order stable-spline kernel.
    """

    beta_ss: float
    rho: float = 0.0
    omega: float = 0.0
    family: str = "TC"

    def __post_init__(self) -> None:
        if not 0.0 < self.beta_ss < 1.0:
            raise ValueError(f"beta_ss must lie in (0, 1), got {self.beta_ss}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if not 0.0 <= self.omega <= np.pi:
            raise ValueError(f"omega must lie in [0, pi], got {self.omega}")
        if self.family not in ("TC", "SS2"):
            raise ValueError(f"unknown kernel family {self.family!r}")


@dataclass(frozen=True)
class LowRankPrior:
    """Structured covariance over output channels for the factor component.

    The p x p channel covariance is

        Lam = alpha * (I - U U^T) + U diag(beta) U^T

    with U a p x n matrix of orthonormal factor directions, beta the per-factor
    variances and alpha the variance assigned to the orthogonal complement.
    n = 0 (U with zero columns) gives Lam = alpha * I.
    """

    alpha: float
    beta: np.ndarray
    U: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "U", np.asarray(self.U, dtype=float))
        if self.U.ndim != 2:
            raise ValueError("U must be a p x n matrix")
        p, n = self.U.shape
        if self.beta.shape != (n,):
            raise ValueError(f"beta must have length {n}, got shape {self.beta.shape}")
        if n > p:
            raise ValueError(f"rank n={n} cannot exceed output dimension p={p}")
        if self.alpha < 0.0 or np.any(self.beta < 0.0):
            raise ValueError("alpha and beta must be nonnegative")
        if n > 0:
            gram = self.U.T @ self.U
            if not np.allclose(gram, np.eye(n), atol=1e-8):
                raise ValueError("columns of U must be orthonormal")

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def n(self) -> int:
        return self.U.shape[1]

    def matrix(self) -> np.ndarray:
        """Assemble the p x p channel covariance."""
        p = self.p
        if self.n == 0:
            return self.alpha * np.eye(p)
        UUt = self.U @ self.U.T
        return sym(self.alpha * (np.eye(p) - UUt) + (self.U * self.beta) @ self.U.T)


def resonance_filter(T: int, rho: float, omega: float) -> np.ndarray:
    """First column of the lower-triangular Toeplitz resonance filter.

    The filter is the impulse response of 1 / (1 - 2 rho cos(omega) z^-1
    + rho^2 z^-2), normalized so the first tap is 1.  rho = 0 returns the
    identity impulse.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    f = np.zeros(T)
    f[0] = 1.0
    a1 = 2.0 * rho * np.cos(omega)
    a2 = -rho * rho
    if T > 1:
        f[1] = a1
    for k in range(2, T):
        f[k] = a1 * f[k - 1] + a2 * f[k - 2]
    return f


def build_base_kernel(params: BaseKernelParams, T: int) -> np.ndarray:
    """T x T covariance of a scalar impulse response over lags 1..T.

    The stable-spline decay kernel is conjugated by the resonance filter:
    P = F P0 F^T with F lower-triangular Toeplitz.  The result is symmetric
    positive definite.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    t = np.arange(1, T + 1, dtype=float)
    tmax = np.maximum.outer(t, t)
    b = params.beta_ss
    if params.family == "TC":
        P0 = b**tmax
    else:
        tsum = np.add.outer(t, t)
        P0 = b ** (tsum + tmax) / 2.0 - b ** (3.0 * tmax) / 6.0
    if params.rho == 0.0:
        return sym(P0)
    f = resonance_filter(T, params.rho, params.omega)
    F = sla.toeplitz(f, np.zeros(T))
    return sym(F @ P0 @ F.T)


def build_sparse_kernel(gamma: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Covariance of the sparse component: diag(gamma) kron P.

    gamma holds one nonnegative scale per input/output coefficient block, in
    the theta block order.  A zero entry switches the corresponding block off
    exactly.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 1:
        raise ValueError("gamma must be a vector with one entry per coefficient block")
    if np.any(gamma < 0.0) or not np.all(np.isfinite(gamma)):
        raise ValueError("gamma entries must be finite and nonnegative")
    return np.kron(np.diag(gamma), P)


def build_lowrank_kernel_type1(lam: float, Lam: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Family-1 low-rank covariance (coupled maximum-entropy construction).

    With A = lam^-1 (I kron P) over all p^2 blocks and B = Lam kron I acting on
    the output-channel index,

        K_L = A - A (A + B)^-1 A,

    which for nonsingular Lam equals (lam (I kron P^-1) + Lam^-1 kron I)^-1.
    lam > 0 couples the overall scale; Lam is the p x p channel covariance.
    """
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    Lam = np.asarray(Lam, dtype=float)
    p = Lam.shape[0]
    if Lam.shape != (p, p) or not np.allclose(Lam, Lam.T, atol=1e-10):
        raise ValueError("Lam must be a symmetric p x p matrix")
    T = P.shape[0]
    A = np.kron(np.eye(p * p), P) / lam
    M = A + np.kron(Lam, np.eye(p * T))
    KL = A - A @ np.linalg.solve(M, A)
    return sym(KL)


def build_lowrank_kernel_type2(Lam: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Family-2 low-rank covariance (separable maximum-entropy construction).

    K_L = Lam kron I_p kron P: the channel covariance Lam acts on the output
    index, inputs are exchangeable, and P shapes the lag profile.  Its rank is
    rank(Lam) * p * rank(P).
    """
    Lam = np.asarray(Lam, dtype=float)
    p = Lam.shape[0]
    if Lam.shape != (p, p) or not np.allclose(Lam, Lam.T, atol=1e-10):
        raise ValueError("Lam must be a symmetric p x p matrix")
    return np.kron(Lam, np.kron(np.eye(p), P))
