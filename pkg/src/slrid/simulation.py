"""Synthetic ground-truth models and data generation.

Ground truth is a stable one-step predictor y(t) = sum_k G_k y(t-k) + e(t)
whose coefficient sequence either splits as G_k = S_k + F H_k (a sparse part
plus n shared factors with loading matrix F) or is a dense unstructured
matrix sequence.  Individual entries are impulse responses of random rational
filters of order at most two; overall stability is enforced by damping all
coefficients until the companion matrix has spectral radius below a cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from ._linalg import sym
from .regressor import CoefficientTensor, TimeSeries

__all__ = [
    "SimConfig",
    "GroundTruthModel",
    "gen_sl_model",
    "gen_generic_model",
    "simulate",
]


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the random model generator and of the simulator."""

    T_true: int = 50
    entry_order: int = 2
    pole_modulus_max: float = 0.8
    spectral_radius_cap: float = 0.95
    damping: float = 0.85
    max_rescale_attempts: int = 100
    burn_in: int = 200

    def __post_init__(self) -> None:
        if not 0.0 < self.pole_modulus_max < 1.0:
            raise ValueError("pole_modulus_max must lie in (0, 1)")
        if not 0.0 < self.spectral_radius_cap < 1.0:
            raise ValueError("spectral_radius_cap must lie in (0, 1)")
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie in (0, 1)")


@dataclass(frozen=True)
class GroundTruthModel:
    """A generative predictor model with known structure.

    kind is "sl" (sparse plus low rank) or "generic" (dense, no structure;
    then n = 0 and the whole coefficient sequence sits in sparse_coeffs).
    factor_coeffs holds the T_true lag matrices of the n x p factor dynamics.
    """

    kind: str
    p: int
    n: int
    T_true: int
    sparse_coeffs: np.ndarray  # (T_true, p, p)
    F: np.ndarray  # (p, n), unit-norm columns
    factor_coeffs: np.ndarray  # (T_true, n, p)
    Sigma: np.ndarray  # (p, p)
    seed: int

    def __post_init__(self) -> None:
        if self.kind not in ("sl", "generic"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.sparse_coeffs.shape != (self.T_true, self.p, self.p):
            raise ValueError("sparse_coeffs shape mismatch")
        if self.F.shape != (self.p, self.n):
            raise ValueError("F shape mismatch")
        if self.factor_coeffs.shape != (self.T_true, self.n, self.p):
            raise ValueError("factor_coeffs shape mismatch")

    @property
    def support(self) -> frozenset[tuple[int, int]]:
        """(i, j) pairs where the sparse part is not identically zero."""
        nz = np.any(self.sparse_coeffs != 0.0, axis=0)
        return frozenset((int(i), int(j)) for i, j in zip(*np.nonzero(nz)))

    def coeffs(self) -> CoefficientTensor:
        """Total predictor coefficients G_k = S_k + F H_k."""
        G = self.sparse_coeffs.copy()
        if self.n > 0:
            G = G + np.einsum("pn,knq->kpq", self.F, self.factor_coeffs)
        return CoefficientTensor(self.p, self.T_true, G)


def _random_impulse_response(rng: np.random.Generator, T: int, config: SimConfig) -> np.ndarray:
    """Strictly causal impulse response of a random stable rational filter.

    Order at most config.entry_order; poles are either a real pair or a
    complex-conjugate pair, all with modulus at most pole_modulus_max.
    """
    order = int(rng.integers(1, config.entry_order + 1))
    if order == 1:
        pole = rng.uniform(-config.pole_modulus_max, config.pole_modulus_max)
        a = np.array([1.0, -pole])
    elif rng.uniform() < 0.5:
        r = rng.uniform(0.2, config.pole_modulus_max)
        th = rng.uniform(0.0, np.pi)
        a = np.array([1.0, -2.0 * r * np.cos(th), r * r])
    else:
        poles = rng.uniform(-config.pole_modulus_max, config.pole_modulus_max, size=2)
        a = np.array([1.0, -(poles[0] + poles[1]), poles[0] * poles[1]])
    b = np.zeros(order + 1)
    b[1:] = rng.normal(size=order)
    impulse = np.zeros(T + 1)
    impulse[0] = 1.0
    h = lfilter(b, a, impulse)[1:]
    peak = np.abs(h).max()
    if peak > 0.0:
        h = h / peak * rng.uniform(0.3, 1.0)
    return h


def _companion_spectral_radius(G: np.ndarray) -> float:
    """Spectral radius of the companion matrix of the lag polynomial G."""
    T, p, _ = G.shape
    C = np.zeros((p * T, p * T))
    C[:p, :] = np.concatenate(list(G), axis=1)
    if T > 1:
        C[p:, : p * (T - 1)] = np.eye(p * (T - 1))
    return float(np.abs(np.linalg.eigvals(C)).max())


def _stabilize(S: np.ndarray, H: np.ndarray, F: np.ndarray, config: SimConfig):
    """Damp S and H jointly until the total predictor is comfortably stable.

    F is untouched so its columns stay unit norm.  Raises RuntimeError when
    the cap is not reached within max_rescale_attempts.
    """
    for _ in range(config.max_rescale_attempts):
        G = S.copy()
        if F.shape[1] > 0:
            G = G + np.einsum("pn,knq->kpq", F, H)
        if _companion_spectral_radius(G) <= config.spectral_radius_cap:
            return S, H
        S = S * config.damping
        H = H * config.damping
    raise RuntimeError(
        f"could not stabilize the model within {config.max_rescale_attempts} attempts"
    )


def gen_sl_model(
    p: int,
    n: int,
    s: int,
    seed: int,
    config: SimConfig | None = None,
    Sigma: np.ndarray | None = None,
) -> GroundTruthModel:
    """Random sparse-plus-low-rank ground truth.

    s distinct coefficient blocks are active in the sparse part, n factors
    load on all channels through a random loading matrix with unit-norm
    columns.  Fully seed-deterministic.
    """
    if not 0 <= s <= p * p:
        raise ValueError(f"s must lie in [0, {p * p}]")
    if not 0 <= n <= p:
        raise ValueError(f"n must lie in [0, {p}]")
    config = config or SimConfig()
    rng = np.random.default_rng(seed)
    T = config.T_true
    positions = rng.choice(p * p, size=s, replace=False)
    S = np.zeros((T, p, p))
    for pos in positions:
        i, j = divmod(int(pos), p)
        S[:, i, j] = _random_impulse_response(rng, T, config)
    H = np.zeros((T, n, p))
    for r in range(n):
        for j in range(p):
            H[:, r, j] = _random_impulse_response(rng, T, config)
    # unit-norm loading columns shrink entries by ~1/sqrt(p); compensate so
    # factor and sparse contributions have comparable magnitude
    H *= np.sqrt(p)
    F = rng.normal(size=(p, n))
    if n > 0:
        F = F / np.linalg.norm(F, axis=0, keepdims=True)
    S, H = _stabilize(S, H, F, config)
    Sigma = np.eye(p) if Sigma is None else sym(np.asarray(Sigma, dtype=float))
    return GroundTruthModel(
        kind="sl", p=p, n=n, T_true=T, sparse_coeffs=S, F=F, factor_coeffs=H,
        Sigma=Sigma, seed=seed,
    )


def gen_generic_model(
    p: int,
    seed: int,
    config: SimConfig | None = None,
    Sigma: np.ndarray | None = None,
) -> GroundTruthModel:
    """Random dense ground truth with no sparse/low-rank structure."""
    config = config or SimConfig()
    rng = np.random.default_rng(seed)
    T = config.T_true
    S = np.zeros((T, p, p))
    for i in range(p):
        for j in range(p):
            S[:, i, j] = _random_impulse_response(rng, T, config)
    F = np.zeros((p, 0))
    H = np.zeros((T, 0, p))
    S, H = _stabilize(S, H, F, config)
    Sigma = np.eye(p) if Sigma is None else sym(np.asarray(Sigma, dtype=float))
    return GroundTruthModel(
        kind="generic", p=p, n=0, T_true=T, sparse_coeffs=S, F=F, factor_coeffs=H,
        Sigma=Sigma, seed=seed,
    )


def simulate(
    model: GroundTruthModel,
    N: int,
    seed: int,
    burn_in: int | None = None,
) -> TimeSeries:
    """Draw N samples from the model with Gaussian innovations.

    The recursion starts from zero initial conditions and discards burn_in
    samples (default 200) so the returned window is close to stationary.
    Fully seed-deterministic.
    """
    if N < 1:
        raise ValueError("N must be positive")
    burn_in = 200 if burn_in is None else burn_in
    rng = np.random.default_rng(seed)
    G = model.coeffs().coeffs
    T, p = model.T_true, model.p
    Lc = np.linalg.cholesky(model.Sigma + 0.0)
    total = burn_in + N
    e = rng.standard_normal((total, p)) @ Lc.T
    y = np.zeros((total, p))
    for t in range(total):
        depth = min(t, T)
        acc = e[t].copy()
        for k in range(1, depth + 1):
            acc += G[k - 1] @ y[t - k]
        y[t] = acc
        if np.abs(acc).max() > 1e9:
            raise RuntimeError("trajectory overflow: the model is not stable in practice")
    return TimeSeries(y[burn_in:].copy())
