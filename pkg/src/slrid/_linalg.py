"""Small shared linear-algebra helpers."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


class NotSPDError(ValueError):
    """Raised when a matrix required to be positive definite is not."""


def sym(M: np.ndarray) -> np.ndarray:
    """Symmetrize, removing floating-point asymmetry."""
    return 0.5 * (M + M.T)


def is_psd(M: np.ndarray, rel_tol: float = 1e-8) -> bool:
    """True when the symmetric matrix M has no eigenvalue below -rel_tol * max_eig.

    The tolerance is relative to the largest eigenvalue magnitude so that
    the check is scale free.  A zero matrix passes.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("is_psd expects a square matrix")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(M).max(initial=1.0))):
        return False
    w = np.linalg.eigvalsh(sym(M))
    scale = max(w.max(initial=0.0), 0.0)
    return bool(w.min(initial=0.0) >= -rel_tol * max(scale, 1e-300))


def spd_factor(V: np.ndarray):
    """Cholesky factor of a symmetric positive definite matrix.

    Raises NotSPDError when the factorization fails, which callers treat as
    "these hyperparameters produced an invalid model covariance".
    """
    try:
        return sla.cholesky(V, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotSPDError(f"matrix is not positive definite: {exc}") from exc


def chol_logdet(L: np.ndarray) -> float:
    """log det of A given its lower Cholesky factor L (A = L L^T)."""
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b given the lower Cholesky factor L of A."""
    z = sla.solve_triangular(L, b, lower=True, check_finite=False)
    return sla.solve_triangular(L.T, z, lower=False, check_finite=False)
