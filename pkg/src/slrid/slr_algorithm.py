"""Identification with automatic factor-rank selection.

The full pipeline for one dataset is:

 0. estimate the innovation covariance (least-squares autoregression) and the
    base-kernel parameters tau (evidence under the unstructured model);
 1. fit the sparse-only model as the rank-0 baseline;
 2. for n = 1, 2, ...: extract n candidate factor directions from the previous
    estimate (for n = 1, from the unstructured estimate) by singular value
    decomposition, optimize the evidence over the remaining hyperparameters,
    and refine direction/hyperparameters alternately while the evidence keeps
    improving; accept rank n only if it beats rank n-1 by a relative margin.

The first rank that fails to improve stops the search and the previous
solution is returned.  Six estimator variants share this machinery: SL-I and
SL-II (sparse plus low-rank, kernel families 1 and 2), L-I and L-II (low rank
only), S (sparse only) and SS (unstructured).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .estimator import PosteriorEstimate, estimate_noise_cov, posterior_estimate
from .evidence import (
    EvidenceWorkspace,
    HyperParams,
    KernelType,
    TauEstimate,
    estimate_tau,
    kernel_matrices,
    optimize_hyperparams,
)
from .kernels import LowRankPrior
from .regressor import (
    CoefficientTensor,
    RegressionProblem,
    ThetaVector,
    TimeSeries,
    build_regressor,
    stack_outputs,
    stacked_lag_matrix,
    theta_to_tensor,
)

__all__ = [
    "AlgoConfig",
    "TraceRecord",
    "IdentResult",
    "NetworkTopology",
    "VARIANTS",
    "subspace_update",
    "extract_network",
    "run_rank_selection",
    "fit_sparse_only",
    "fit_unstructured",
    "identify",
]

VARIANTS = ("SL-I", "SL-II", "L-I", "L-II", "S", "SS")


@dataclass(frozen=True)
class AlgoConfig:
    """Tuning knobs shared by every estimator variant.

    tol_rel is the relative evidence improvement required both to keep
    refining within a rank and to accept a rank increment.  max_rank defaults
    to the channel count p.
    """

    T: int = 50
    arx_order: int | None = None
    kernel_family: str = "TC"
    tol_rel: float = 1e-4
    max_rank: int | None = None
    inner_cap: int = 20
    max_iter: int = 500
    opt_rel_tol: float = 1e-6
    opt_pg_tol: float = 1e-5
    threshold_rel: float = 0.05
    refine_tau: bool = True


@dataclass(frozen=True)
class TraceRecord:
    """One optimized candidate in the rank-selection search."""

    step: int
    rank: int
    nll: float


@dataclass(frozen=True)
class IdentResult:
    """Everything produced by one identification run."""

    label: str
    n: int
    hyperparams: HyperParams
    estimate: PosteriorEstimate
    nll: float
    nll_trace: tuple[TraceRecord, ...]
    tau: TauEstimate
    Sigma: np.ndarray

    @property
    def p(self) -> int:
        return self.hyperparams.p

    @property
    def T(self) -> int:
        return self.hyperparams.T

    @property
    def U(self) -> np.ndarray:
        lr = self.hyperparams.lowrank
        return np.zeros((self.p, 0)) if lr is None else lr.U

    @property
    def sparse_coeffs(self) -> CoefficientTensor:
        return theta_to_tensor(self.estimate.theta_s)

    @property
    def lowrank_coeffs(self) -> CoefficientTensor:
        return theta_to_tensor(self.estimate.theta_l)

    @property
    def coeffs(self) -> CoefficientTensor:
        """Combined predictor coefficients, sparse plus low rank."""
        return theta_to_tensor(self.estimate.theta)


@dataclass(frozen=True)
class NetworkTopology:
    """Thresholded support of the identified model.

    sparse_edges holds (source, target) channel pairs, 0-based: (j, i) means
    past samples of channel j enter the sparse part of the predictor of
    channel i.  factor_loading_support marks which channels load on which of
    the n factors.
    """

    sparse_edges: frozenset[tuple[int, int]]
    n_factors: int
    factor_loading_support: np.ndarray


def subspace_update(A: np.ndarray, n: int) -> np.ndarray:
    """Top-n left singular vectors of A with a deterministic sign convention.

    Each column is flipped so its largest-magnitude entry is positive (ties
    resolve to the lowest index).  Raises on a zero matrix, where no direction
    is defined.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("A must be a matrix")
    if not 1 <= n <= A.shape[0]:
        raise ValueError(f"n must lie in [1, {A.shape[0]}], got {n}")
    if not np.any(A):
        raise ValueError("cannot extract directions from a zero matrix")
    U, _, _ = np.linalg.svd(A, full_matrices=True)
    U = U[:, :n].copy()
    for r in range(n):
        lead = np.argmax(np.abs(U[:, r]))
        if U[lead, r] < 0.0:
            U[:, r] = -U[:, r]
    return U


def extract_network(
    theta_s: ThetaVector, U: np.ndarray, threshold_rel: float
) -> NetworkTopology:
    """Read the graph off the estimate by relative thresholding.

    An edge (j -> i) is reported when the lag-profile norm of block (i, j)
    exceeds threshold_rel times the largest block norm; factor loadings are
    thresholded the same way on |U|.  A zero sparse estimate yields no edges.
    """
    if threshold_rel < 0.0:
        raise ValueError("threshold_rel must be nonnegative")
    p = theta_s.p
    norms = np.array(
        [[np.linalg.norm(theta_s.block(i, j)) for j in range(p)] for i in range(p)]
    )
    cut = threshold_rel * norms.max(initial=0.0)
    edges = frozenset(
        (j, i) for i in range(p) for j in range(p) if norms[i, j] > cut
    )
    U = np.asarray(U, dtype=float)
    if U.size:
        support = np.abs(U) > threshold_rel * np.abs(U).max()
    else:
        support = np.zeros(U.shape, dtype=bool)
    return NetworkTopology(
        sparse_edges=edges, n_factors=U.shape[1], factor_loading_support=support
    )


@dataclass(frozen=True)
class _Prepared:
    prob: RegressionProblem
    ws: EvidenceWorkspace
    Sigma: np.ndarray
    tau: TauEstimate


def _prepare(ts: TimeSeries, config: AlgoConfig) -> _Prepared:
    Sigma = estimate_noise_cov(ts, config.arx_order)
    tau = estimate_tau(
        ts, Sigma, config.T, family=config.kernel_family, refine=config.refine_tau
    )
    prob = RegressionProblem(build_regressor(ts, config.T), stack_outputs(ts), Sigma)
    return _Prepared(prob=prob, ws=EvidenceWorkspace(prob), Sigma=Sigma, tau=tau)


def _optimize(ws: EvidenceWorkspace, hp: HyperParams, config: AlgoConfig):
    return optimize_hyperparams(
        ws,
        hp,
        max_iter=config.max_iter,
        rel_tol=config.opt_rel_tol,
        pg_tol=config.opt_pg_tol,
    )


def _tol(ref: float, config: AlgoConfig) -> float:
    return config.tol_rel * max(1.0, abs(ref))


@dataclass(frozen=True)
class _RankSolution:
    n: int
    hp: HyperParams
    estimate: PosteriorEstimate
    nll: float


def _posterior(prob: RegressionProblem, hp: HyperParams) -> PosteriorEstimate:
    return posterior_estimate(prob, *kernel_matrices(hp))


def _zero_lowrank_hp(tau, p: int, T: int) -> HyperParams:
    prior = LowRankPrior(alpha=0.0, beta=np.zeros(0), U=np.zeros((p, 0)))
    return HyperParams(KernelType.LOWRANK2, tau, p, T, lowrank=prior)


def _init_rank_hp(
    kernel_type: KernelType,
    include_sparse: bool,
    prev: HyperParams,
    n: int,
    U: np.ndarray,
    tau: TauEstimate,
) -> HyperParams:
    """Initial hyperparameters for a rank-n attempt.

    Every rank starts from the same data-calibrated point (all variances at
    the unstructured scale) rather than from the previous rank's optimum.
    Carrying the optimized gamma over lets the sparse part keep variance the
    factor should claim, which biases the comparison between ranks.
    """
    p, T = prev.p, prev.T
    fill = max(tau.scale, 1e-6)
    prior = LowRankPrior(alpha=fill, beta=np.full(n, fill), U=U)
    if include_sparse:
        kt = kernel_type
        gamma = np.full(p * p, fill)
    else:
        kt = KernelType.LOWRANK1 if kernel_type is KernelType.TYPE1 else KernelType.LOWRANK2
        gamma = None
    return HyperParams(
        kt,
        prev.tau,
        p,
        T,
        gamma=gamma,
        lowrank=prior,
        lam=1.0 if kt.lowrank_family == 1 else None,
    )


def run_rank_selection(
    ts: TimeSeries,
    kernel_type: KernelType,
    config: AlgoConfig | None = None,
    include_sparse: bool = True,
) -> IdentResult:
    """Identify a model of ts with automatic selection of the factor rank.

    kernel_type picks the low-rank kernel family (TYPE1 or TYPE2); with
    include_sparse=False the sparse component is dropped (the L-only
    variants).  Returns the accepted solution; its nll_trace records every
    optimized candidate as (step, rank, nll).
    """
    if kernel_type not in (KernelType.TYPE1, KernelType.TYPE2):
        raise ValueError("kernel_type must be TYPE1 or TYPE2")
    config = config or AlgoConfig()
    prep = _prepare(ts, config)
    p, T = ts.p, config.T
    trace: list[TraceRecord] = []
    step = 0

    if include_sparse:
        fill = max(prep.tau.scale, 1e-6)
        hp0 = HyperParams(
            KernelType.SPARSE_ONLY, prep.tau.tau, p, T, gamma=np.full(p * p, fill)
        )
        r0 = _optimize(prep.ws, hp0, config)
        hp0, nll0 = r0.hyperparams, r0.nll
        label = "SL-I" if kernel_type is KernelType.TYPE1 else "SL-II"
    else:
        hp0 = _zero_lowrank_hp(prep.tau.tau, p, T)
        nll0 = prep.ws.nll(hp0)
        label = "L-I" if kernel_type is KernelType.TYPE1 else "L-II"
    step += 1
    trace.append(TraceRecord(step, 0, nll0))
    best = _RankSolution(0, hp0, _posterior(prep.prob, hp0), nll0)

    hp_ss = HyperParams(KernelType.UNSTRUCTURED, prep.tau.tau, p, T, scale=prep.tau.scale)
    est_ss = _posterior(prep.prob, hp_ss)
    Al = stacked_lag_matrix(theta_to_tensor(est_ss.theta_s))

    max_rank = config.max_rank if config.max_rank is not None else p
    for n in range(1, max_rank + 1):
        if not np.any(Al):
            break
        U = subspace_update(Al, n)
        hp = _init_rank_hp(kernel_type, include_sparse, best.hp, n, U, prep.tau)
        r = _optimize(prep.ws, hp, config)
        step += 1
        trace.append(TraceRecord(step, n, r.nll))
        cand = _RankSolution(n, r.hyperparams, _posterior(prep.prob, r.hyperparams), r.nll)
        for _ in range(config.inner_cap):
            Al_in = stacked_lag_matrix(theta_to_tensor(cand.estimate.theta_l))
            if not np.any(Al_in):
                break
            U_in = subspace_update(Al_in, n)
            hp_in = replace(
                cand.hp,
                lowrank=LowRankPrior(
                    alpha=cand.hp.lowrank.alpha, beta=cand.hp.lowrank.beta, U=U_in
                ),
            )
            r_in = _optimize(prep.ws, hp_in, config)
            step += 1
            trace.append(TraceRecord(step, n, r_in.nll))
            keep_refining = r_in.nll < cand.nll - _tol(cand.nll, config)
            if r_in.nll < cand.nll:
                cand = _RankSolution(
                    n, r_in.hyperparams, _posterior(prep.prob, r_in.hyperparams), r_in.nll
                )
            if not keep_refining:
                break
        if cand.nll < best.nll - _tol(best.nll, config):
            best = cand
            Al = stacked_lag_matrix(theta_to_tensor(best.estimate.theta_l))
        else:
            break

    return IdentResult(
        label=label,
        n=best.n,
        hyperparams=best.hp,
        estimate=best.estimate,
        nll=best.nll,
        nll_trace=tuple(trace),
        tau=prep.tau,
        Sigma=prep.Sigma,
    )


def fit_sparse_only(ts: TimeSeries, config: AlgoConfig | None = None) -> IdentResult:
    """The S variant: group-sparse prior only, no factor component."""
    config = config or AlgoConfig()
    prep = _prepare(ts, config)
    p, T = ts.p, config.T
    fill = max(prep.tau.scale, 1e-6)
    hp = HyperParams(KernelType.SPARSE_ONLY, prep.tau.tau, p, T, gamma=np.full(p * p, fill))
    r = _optimize(prep.ws, hp, config)
    return IdentResult(
        label="S",
        n=0,
        hyperparams=r.hyperparams,
        estimate=_posterior(prep.prob, r.hyperparams),
        nll=r.nll,
        nll_trace=(TraceRecord(1, 0, r.nll),),
        tau=prep.tau,
        Sigma=prep.Sigma,
    )


def fit_unstructured(ts: TimeSeries, config: AlgoConfig | None = None) -> IdentResult:
    """The SS variant: one shared scale, no structure.

    tau estimation already profiles the scale to its evidence optimum, so no
    further hyperparameter search is needed; the whole predictor lands in the
    sparse slot of the estimate.
    """
    config = config or AlgoConfig()
    prep = _prepare(ts, config)
    hp = HyperParams(
        KernelType.UNSTRUCTURED, prep.tau.tau, ts.p, config.T, scale=prep.tau.scale
    )
    value = prep.ws.nll(hp)
    return IdentResult(
        label="SS",
        n=0,
        hyperparams=hp,
        estimate=_posterior(prep.prob, hp),
        nll=value,
        nll_trace=(TraceRecord(1, 0, value),),
        tau=prep.tau,
        Sigma=prep.Sigma,
    )


def identify(ts: TimeSeries, variant: str, config: AlgoConfig | None = None) -> IdentResult:
    """Dispatch one of the six estimator variants by its label."""
    if variant == "SL-I":
        return run_rank_selection(ts, KernelType.TYPE1, config, include_sparse=True)
    if variant == "SL-II":
        return run_rank_selection(ts, KernelType.TYPE2, config, include_sparse=True)
    if variant == "L-I":
        return run_rank_selection(ts, KernelType.TYPE1, config, include_sparse=False)
    if variant == "L-II":
        return run_rank_selection(ts, KernelType.TYPE2, config, include_sparse=False)
    if variant == "S":
        return fit_sparse_only(ts, config)
    if variant == "SS":
        return fit_unstructured(ts, config)
    raise ValueError(f"unknown estimator variant {variant!r}; expected one of {VARIANTS}")
