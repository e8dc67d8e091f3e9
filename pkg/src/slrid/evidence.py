"""Marginal likelihood of the hyperparameters and its optimization.

The negative log marginal likelihood (up to an additive constant, fixed here
to zero) of hyperparameters xi is

    nll = 1/2 log det V + 1/2 y_plus^T V^-1 y_plus,
    V = Phi K(xi) Phi^T + Sigma kron I_N,

with K the prior covariance assembled per kernel type.  Because Phi is block
diagonal with p identical blocks [phi_1 ... phi_p] and K is a sum of Kronecker
terms, V decomposes into p x p blocks of N x N matrices

    V[i, i'] = delta_ii' sum_j gamma[i, j] phi_j P phi_j^T
             + sum_t D_t[i, i'] sum_j phi_j Q_t phi_j^T
             + Sigma[i, i'] I_N

which this module assembles directly instead of forming Phi K Phi^T densely.
Gradients come from d nll = 1/2 tr(V^-1 dV) - 1/2 y^T V^-1 dV V^-1 y with
dV = Phi dK Phi^T, reduced to structured traces of X = Phi^T V^-1 Phi.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize, minimize_scalar

from ._linalg import NotSPDError, chol_logdet, chol_solve, spd_factor, sym
from .kernels import (
    BaseKernelParams,
    LowRankPrior,
    build_base_kernel,
    build_lowrank_kernel_type1,
    build_lowrank_kernel_type2,
    build_sparse_kernel,
)
from .regressor import RegressionProblem, TimeSeries, lagged_regressor

__all__ = [
    "KernelType",
    "HyperParams",
    "EvidenceWorkspace",
    "OptimizeResult",
    "TauEstimate",
    "LAMBDA_MIN",
    "DEFAULT_TAU_GRID",
    "nll",
    "nll_grad",
    "kernel_matrices",
    "pack_hyperparams",
    "unpack_hyperparams",
    "default_lower_bounds",
    "optimize_hyperparams",
    "estimate_tau",
]

LAMBDA_MIN = 1e-6


class KernelType(Enum):
    """Which prior components are active and which low-rank family is used."""

    TYPE1 = "type1"
    TYPE2 = "type2"
    SPARSE_ONLY = "sparse"
    LOWRANK1 = "lowrank1"
    LOWRANK2 = "lowrank2"
    UNSTRUCTURED = "unstructured"

    @property
    def has_sparse(self) -> bool:
        return self in (KernelType.TYPE1, KernelType.TYPE2, KernelType.SPARSE_ONLY)

    @property
    def has_lowrank(self) -> bool:
        return self in (
            KernelType.TYPE1,
            KernelType.TYPE2,
            KernelType.LOWRANK1,
            KernelType.LOWRANK2,
        )

    @property
    def lowrank_family(self) -> int | None:
        if self in (KernelType.TYPE1, KernelType.LOWRANK1):
            return 1
        if self in (KernelType.TYPE2, KernelType.LOWRANK2):
            return 2
        return None


@dataclass(frozen=True)
class HyperParams:
    """All tunable quantities of one model fit.

    Which fields must be present depends on kernel_type: gamma for the sparse
    component, lowrank (and lam for family 1) for the factor component, scale
    for the unstructured model.  tau is the shared base-kernel parameter
    bundle and is held fixed during evidence optimization.
    """

    kernel_type: KernelType
    tau: BaseKernelParams
    p: int
    T: int
    gamma: np.ndarray | None = None
    lowrank: LowRankPrior | None = None
    lam: float | None = None
    scale: float | None = None

    def __post_init__(self) -> None:
        kt = self.kernel_type
        if kt.has_sparse:
            if self.gamma is None:
                raise ValueError(f"{kt} requires gamma")
            gamma = np.asarray(self.gamma, dtype=float)
            if gamma.shape != (self.p * self.p,):
                raise ValueError(f"gamma must have shape ({self.p * self.p},)")
            if np.any(gamma < 0.0):
                raise ValueError("gamma must be nonnegative")
            object.__setattr__(self, "gamma", gamma)
        if kt.has_lowrank:
            if self.lowrank is None:
                raise ValueError(f"{kt} requires a lowrank prior")
            if self.lowrank.p != self.p:
                raise ValueError("lowrank prior dimension does not match p")
        if kt.lowrank_family == 1:
            if self.lam is None or self.lam <= 0.0:
                raise ValueError("family-1 kernels require lam > 0")
        if kt is KernelType.UNSTRUCTURED:
            if self.scale is None or self.scale < 0.0:
                raise ValueError("unstructured kernel requires scale >= 0")

    @property
    def n(self) -> int:
        return 0 if self.lowrank is None else self.lowrank.n


def pack_hyperparams(hp: HyperParams) -> np.ndarray:
    """Flatten the tunable coordinates: gamma blocks, alpha, beta entries, lam
    or scale, in that order.  The factor directions U and tau stay fixed."""
    parts: list[np.ndarray] = []
    if hp.kernel_type.has_sparse:
        parts.append(hp.gamma)
    if hp.kernel_type.has_lowrank:
        parts.append(np.array([hp.lowrank.alpha]))
        parts.append(hp.lowrank.beta)
    if hp.kernel_type.lowrank_family == 1:
        parts.append(np.array([hp.lam]))
    if hp.kernel_type is KernelType.UNSTRUCTURED:
        parts.append(np.array([hp.scale]))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def unpack_hyperparams(template: HyperParams, x: np.ndarray) -> HyperParams:
    """Inverse of pack_hyperparams, keeping U and tau from the template."""
    x = np.asarray(x, dtype=float)
    pos = 0
    fields: dict = {}
    kt = template.kernel_type
    if kt.has_sparse:
        m = template.p * template.p
        fields["gamma"] = x[pos : pos + m].copy()
        pos += m
    if kt.has_lowrank:
        alpha = float(x[pos])
        pos += 1
        n = template.lowrank.n
        beta = x[pos : pos + n].copy()
        pos += n
        fields["lowrank"] = LowRankPrior(alpha=alpha, beta=beta, U=template.lowrank.U)
    if kt.lowrank_family == 1:
        fields["lam"] = float(x[pos])
        pos += 1
    if kt is KernelType.UNSTRUCTURED:
        fields["scale"] = float(x[pos])
        pos += 1
    if pos != x.shape[0]:
        raise ValueError(f"expected {pos} coordinates, got {x.shape[0]}")
    return replace(template, **fields)


def default_lower_bounds(hp: HyperParams) -> np.ndarray:
    """Box lower bounds matching pack_hyperparams: 0 for variances, a small
    positive floor for the family-1 coupling lam."""
    lb = np.zeros_like(pack_hyperparams(hp))
    if hp.kernel_type.lowrank_family == 1:
        pos = hp.p * hp.p if hp.kernel_type.has_sparse else 0
        pos += 1 + hp.lowrank.n
        lb[pos] = LAMBDA_MIN
    return lb


def kernel_matrices(hp: HyperParams) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Materialize (K_S, K_L) densely for the posterior solve.

    For the unstructured kernel the whole prior scale * I kron P is returned
    in the K_S slot, since there is no sparse/low-rank split to report.
    """
    P = build_base_kernel(hp.tau, hp.T)
    K_S = None
    K_L = None
    if hp.kernel_type.has_sparse:
        K_S = build_sparse_kernel(hp.gamma, P)
    elif hp.kernel_type is KernelType.UNSTRUCTURED:
        K_S = build_sparse_kernel(np.full(hp.p * hp.p, hp.scale), P)
    if hp.kernel_type.lowrank_family == 1:
        K_L = build_lowrank_kernel_type1(hp.lam, hp.lowrank.matrix(), P)
    elif hp.kernel_type.lowrank_family == 2:
        K_L = build_lowrank_kernel_type2(hp.lowrank.matrix(), P)
    return K_S, K_L


def _family1_groups(
    lowrank: LowRankPrior, lam: float, P: np.ndarray, want_grads: bool
) -> list[dict]:
    """Eigen-groups of the family-1 kernel.

    The channel covariance Lam has eigenvalue alpha on the complement of U and
    beta_r on each factor direction, so the coupled kernel splits per group as
    D_g kron I_p kron Q(x_g) with

        Q(x) = A - A (A + x I)^-1 A,   A = P / lam.

    Each returned dict carries the projector D, the lag kernel Q, and (when
    requested) dQ/dx and dQ/dlam.
    """
    p, n = lowrank.p, lowrank.n
    A = P / lam
    groups: list[dict] = []
    eigpairs: list[tuple[np.ndarray, float, str, int]] = []
    if n < p:
        Dc = np.eye(p) - lowrank.U @ lowrank.U.T if n > 0 else np.eye(p)
        eigpairs.append((Dc, lowrank.alpha, "alpha", -1))
    for r in range(n):
        ur = lowrank.U[:, r : r + 1]
        eigpairs.append((ur @ ur.T, float(lowrank.beta[r]), "beta", r))
    for D, x, role, idx in eigpairs:
        S = np.linalg.solve(A + x * np.eye(P.shape[0]), A)
        Q = sym(A - A @ S)
        g = {"D": D, "Q": Q, "x": x, "role": role, "index": idx}
        if want_grads:
            g["dQ_dx"] = sym(S.T @ S)
            E = np.eye(P.shape[0]) - S
            g["dQ_dlam"] = sym(-(E.T @ (A @ E)) / lam)
        groups.append(g)
    return groups


class EvidenceWorkspace:
    """Precomputed data-side quantities for repeated evidence evaluations.

    Binds to one RegressionProblem; hyperparameters vary call to call.  The
    regressor must have the block structure produced by build_regressor.
    """

    def __init__(self, prob: RegressionProblem):
        self.prob = prob
        p, N, T = prob.p, prob.N, prob.T
        self.p, self.N, self.T = p, N, T
        R = prob.Phi[:N, : p * T]
        for i in range(p):
            blk = prob.Phi[i * N : (i + 1) * N, i * p * T : (i + 1) * p * T]
            if not np.array_equal(blk, R):
                raise ValueError("Phi must be block diagonal with identical blocks")
        if not np.isclose(np.abs(prob.Phi).sum(), p * np.abs(R).sum()):
            raise ValueError("Phi has nonzero entries outside its diagonal blocks")
        self.R = R
        self.phi = [R[:, j * T : (j + 1) * T] for j in range(p)]
        self.y = prob.yplus
        self.Sigma = prob.Sigma
        self._P_cache: tuple[tuple, np.ndarray, list[np.ndarray]] | None = None

    def _base_kernel(self, tau: BaseKernelParams) -> tuple[np.ndarray, list[np.ndarray]]:
        key = (tau.beta_ss, tau.rho, tau.omega, tau.family, self.T)
        if self._P_cache is None or self._P_cache[0] != key:
            P = build_base_kernel(tau, self.T)
            Wj = [phi @ P @ phi.T for phi in self.phi]
            self._P_cache = (key, P, Wj)
        return self._P_cache[1], self._P_cache[2]

    def _sum_quad(self, Q: np.ndarray) -> np.ndarray:
        """sum_j phi_j Q phi_j^T."""
        out = np.zeros((self.N, self.N))
        for phi in self.phi:
            out += phi @ Q @ phi.T
        return out

    def _value_terms(self, hp: HyperParams, want_grads: bool):
        """Split the kernel into the gamma part and a list of (D, Q) terms."""
        P, Wj = self._base_kernel(hp.tau)
        gamma = hp.gamma if hp.kernel_type.has_sparse else None
        terms: list[tuple[np.ndarray, np.ndarray]] = []
        groups: list[dict] = []
        if hp.kernel_type is KernelType.UNSTRUCTURED:
            terms.append((hp.scale * np.eye(self.p), P))
        elif hp.kernel_type.lowrank_family == 2:
            terms.append((hp.lowrank.matrix(), P))
        elif hp.kernel_type.lowrank_family == 1:
            groups = _family1_groups(hp.lowrank, hp.lam, P, want_grads)
            terms.extend((g["D"], g["Q"]) for g in groups)
        return P, Wj, gamma, terms, groups

    def _assemble(self, gamma, Wj, terms) -> np.ndarray:
        p, N = self.p, self.N
        V4 = np.zeros((p, N, p, N))
        ar = np.arange(N)
        for i in range(p):
            for k in range(p):
                V4[i, ar, k, ar] += self.Sigma[i, k]
            if gamma is not None:
                for j in range(p):
                    g = gamma[i * p + j]
                    if g != 0.0:
                        V4[i, :, i, :] += g * Wj[j]
        for D, Q in terms:
            if np.any(D):
                V4 += D[:, None, :, None] * self._sum_quad(Q)[None, :, None, :]
        return V4.reshape(p * N, p * N)

    def nll(self, hp: HyperParams) -> float:
        """Negative log marginal likelihood (additive constant dropped)."""
        _, Wj, gamma, terms, _ = self._value_terms(hp, want_grads=False)
        V = self._assemble(gamma, Wj, terms)
        L = spd_factor(V)
        c = chol_solve(L, self.y)
        return 0.5 * chol_logdet(L) + 0.5 * float(self.y @ c)

    def nll_grad(self, hp: HyperParams) -> tuple[float, np.ndarray]:
        """Evidence value and its gradient in pack_hyperparams order."""
        p, N, T = self.p, self.N, self.T
        P, Wj, gamma, terms, groups = self._value_terms(hp, want_grads=True)
        V = self._assemble(gamma, Wj, terms)
        L = spd_factor(V)
        u = chol_solve(L, self.y)
        value = 0.5 * chol_logdet(L) + 0.5 * float(self.y @ u)
        T1 = sla.solve_triangular(L, self.prob.Phi, lower=True, check_finite=False)
        X = T1.T @ T1
        v = self.prob.Phi.T @ u
        grads: list[np.ndarray] = []
        if hp.kernel_type.has_sparse:
            Xd = X.reshape(p * p, T, p * p, T)
            Xdiag = Xd[np.arange(p * p), :, np.arange(p * p), :]
            tr = np.einsum("bkl,lk->b", Xdiag, P)
            v2 = v.reshape(p * p, T)
            quad = np.einsum("bk,kl,bl->b", v2, P, v2)
            grads.append(0.5 * (tr - quad))
        X6 = X.reshape(p, p, T, p, p, T)
        v3 = v.reshape(p, p, T)

        def term_grad(D: np.ndarray, Q: np.ndarray) -> float:
            tmat = np.einsum("ijkIjl,lk->iI", X6, Q)
            qmat = np.einsum("ijk,kl,Ijl->iI", v3, Q, v3)
            return 0.5 * float(np.sum(D * (tmat - qmat)))

        kt = hp.kernel_type
        if kt.lowrank_family == 2:
            U = hp.lowrank.U
            n = hp.lowrank.n
            Dc = np.eye(p) - U @ U.T if n > 0 else np.eye(p)
            grads.append(np.array([term_grad(Dc, P)]))
            grads.append(
                np.array([term_grad(np.outer(U[:, r], U[:, r]), P) for r in range(n)])
            )
        elif kt.lowrank_family == 1:
            n = hp.lowrank.n
            g_alpha = 0.0
            g_beta = np.zeros(n)
            g_lam = 0.0
            for g in groups:
                if g["role"] == "alpha":
                    g_alpha = term_grad(g["D"], g["dQ_dx"])
                else:
                    g_beta[g["index"]] = term_grad(g["D"], g["dQ_dx"])
                g_lam += term_grad(g["D"], g["dQ_dlam"])
            if n == p:
                g_alpha = 0.0  # no complement left; alpha is inert
            grads.append(np.array([g_alpha]))
            grads.append(g_beta)
            grads.append(np.array([g_lam]))
        elif kt is KernelType.UNSTRUCTURED:
            grads.append(np.array([term_grad(np.eye(p), P)]))
        if not grads:
            return value, np.zeros(0)
        return value, np.concatenate(grads)


def _as_workspace(prob) -> EvidenceWorkspace:
    return prob if isinstance(prob, EvidenceWorkspace) else EvidenceWorkspace(prob)


def nll(prob, hp: HyperParams) -> float:
    """Module-level convenience wrapper; accepts a problem or a workspace."""
    return _as_workspace(prob).nll(hp)


def nll_grad(prob, hp: HyperParams) -> tuple[float, np.ndarray]:
    """Evidence and gradient; accepts a problem or a workspace."""
    return _as_workspace(prob).nll_grad(hp)


@dataclass(frozen=True)
class OptimizeResult:
    """Outcome of a projected-gradient evidence minimization."""

    hyperparams: HyperParams
    nll: float
    n_iter: int
    converged: bool


def optimize_hyperparams(
    prob,
    init: HyperParams,
    bounds: np.ndarray | None = None,
    max_iter: int = 500,
    rel_tol: float = 1e-6,
    pg_tol: float = 1e-5,
) -> OptimizeResult:
    """Minimize the evidence over the box {x >= bounds} from a feasible start.

    Gradient projection with quasi-Newton steps on the free coordinates
    (L-BFGS-B), which keeps every iterate feasible and monotone.  Stops when
    the relative decrease falls below rel_tol, the projected gradient
    infinity norm falls below pg_tol, or after max_iter iterations.  The
    returned point never has higher evidence than the (projected) initial
    point.
    """
    ws = _as_workspace(prob)
    lb = default_lower_bounds(init) if bounds is None else np.asarray(bounds, dtype=float)
    x0 = np.maximum(pack_hyperparams(init), lb)
    if x0.size == 0:
        return OptimizeResult(init, ws.nll(init), 0, True)

    def fun(z: np.ndarray) -> tuple[float, np.ndarray]:
        # infeasible trial points (numerically indefinite V) are rejected by
        # the line search via an infinite value
        try:
            return ws.nll_grad(unpack_hyperparams(init, z))
        except NotSPDError:
            return np.inf, np.zeros_like(z)

    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(b, None) for b in lb],
        options={
            "maxiter": max_iter,
            "ftol": rel_tol,
            "gtol": pg_tol,
            "maxcor": 20,
            "maxls": 50,
        },
    )
    best = unpack_hyperparams(init, np.maximum(res.x, lb))
    return OptimizeResult(best, float(res.fun), int(res.nit), res.status == 0)


DEFAULT_TAU_GRID = {
    "beta_ss": tuple(np.round(np.arange(0.50, 0.9501, 0.05), 2)),
    "rho": (0.0, 0.3, 0.6, 0.9),
    "omega": (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4, np.pi),
}


@dataclass(frozen=True)
class TauEstimate:
    """Selected base-kernel parameters with the matching unstructured scale."""

    tau: BaseKernelParams
    scale: float
    nll: float


def estimate_tau(
    ts: TimeSeries,
    Sigma: np.ndarray,
    T: int,
    family: str = "TC",
    grid: dict | None = None,
    refine: bool = True,
) -> TauEstimate:
    """Select the base-kernel parameters by evidence under the unstructured model.

    For each candidate tau the kernel is scale * I kron P and the scale is
    profiled out by a one-dimensional search; a coarse grid over (beta_ss,
    rho, omega) is followed by a local Nelder-Mead refinement.  The search is
    fast because for fixed tau the whitened output covariance diagonalizes:
    eigenvalues of Sigma^-1 pair with eigenvalues of sum_j phi_j P phi_j^T.
    """
    if grid is None:
        grid = DEFAULT_TAU_GRID
    p, N = ts.p, ts.N
    R = np.hstack([lagged_regressor(ts.values[:, j], T) for j in range(p)])
    sig, Es = np.linalg.eigh(sym(np.asarray(Sigma, dtype=float)))
    if sig.min() <= 0.0:
        raise NotSPDError("Sigma must be positive definite to estimate tau")
    # rows of Z0: whitened channels expressed in the eigenbasis of Sigma
    Z0 = (Es.T @ ts.values.T) / np.sqrt(sig)[:, None]
    s_inv = 1.0 / sig
    total_quad = float(np.sum(Z0 * Z0))
    logdet_noise = N * float(np.sum(np.log(sig)))

    def profile(params: BaseKernelParams) -> tuple[float, float]:
        P = build_base_kernel(params, T)
        d, Ep = np.linalg.eigh(P)
        Ph = (Ep * np.sqrt(np.clip(d, 0.0, None))) @ Ep.T
        G = np.hstack([phi @ Ph for phi in np.split(R, p, axis=1)])
        w, Evec = np.linalg.eigh(G.T @ G)
        keep = w > max(w.max(initial=0.0), 0.0) * 1e-14
        w = w[keep]
        if w.size == 0:
            val = 0.5 * (logdet_noise + total_quad)
            return val, 0.0
        Enz = (G @ Evec[:, keep]) / np.sqrt(w)
        Znz = Z0 @ Enz
        sw = np.outer(s_inv, w).ravel()
        z2 = (Znz * Znz).ravel()

        def obj(logc: float) -> float:
            t = np.exp(logc) * sw
            return 0.5 * (
                logdet_noise + float(np.sum(np.log1p(t))) + total_quad
                - float(np.sum(z2 * (t / (1.0 + t))))
            )

        res = minimize_scalar(obj, bounds=(-25.0, 25.0), method="bounded",
                              options={"xatol": 1e-8})
        return float(res.fun), float(np.exp(res.x))

    best_val = np.inf
    best_params = None
    best_scale = 0.0
    for b in grid["beta_ss"]:
        for r in grid["rho"]:
            omegas = grid["omega"] if r > 0.0 else (0.0,)
            for w_ in omegas:
                params = BaseKernelParams(beta_ss=float(b), rho=float(r),
                                          omega=float(w_), family=family)
                val, sc = profile(params)
                if val < best_val:
                    best_val, best_params, best_scale = val, params, sc
    if refine:
        def refine_obj(z: np.ndarray) -> float:
            params = BaseKernelParams(beta_ss=float(z[0]), rho=float(z[1]),
                                      omega=float(z[2]), family=family)
            return profile(params)[0]

        z0 = np.array([best_params.beta_ss, best_params.rho, best_params.omega])
        res = minimize(
            refine_obj,
            z0,
            method="Nelder-Mead",
            bounds=[(0.05, 0.995), (0.0, 0.99), (0.0, np.pi)],
            options={"xatol": 1e-3, "fatol": 1e-6, "maxfev": 120},
        )
        if res.fun < best_val:
            best_params = BaseKernelParams(
                beta_ss=float(res.x[0]), rho=float(res.x[1]), omega=float(res.x[2]),
                family=family,
            )
            best_val, best_scale = profile(best_params)
    return TauEstimate(tau=best_params, scale=best_scale, nll=best_val)
