"""Data containers and the linear-in-parameters form of the one-step predictor.

A length-N, p-channel series y is identified through the regression

    y_plus = Phi theta + noise

where y_plus stacks the channels one after the other (channel-major), theta
holds all impulse-response coefficients in the block order described in
`slrid.kernels`, and Phi is block diagonal with p identical copies of the
lagged-data matrix [phi_1 ... phi_p].  Lags reaching before the first sample
are treated as zeros, so the first predicted sample of every channel is 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TimeSeries",
    "ThetaVector",
    "CoefficientTensor",
    "RegressionProblem",
    "stack_outputs",
    "lagged_regressor",
    "build_regressor",
    "theta_to_tensor",
    "tensor_to_theta",
    "stacked_lag_matrix",
    "read_timeseries_csv",
    "write_timeseries_csv",
]


@dataclass(frozen=True)
class TimeSeries:
    """A finite sample of a p-channel series, rows indexed by time."""

    values: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be an N x p array")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("need at least one sample and one channel")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", values)
        if self.names is not None:
            names = tuple(str(c) for c in self.names)
            if len(names) != values.shape[1]:
                raise ValueError("one name per channel required")
            object.__setattr__(self, "names", names)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ThetaVector:
    """Flat coefficient vector of length p*p*T in block order (output, input, lag)."""

    p: int
    T: int
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.p * self.p * self.T,):
            raise ValueError(
                f"data must have shape ({self.p * self.p * self.T},), got {data.shape}"
            )
        object.__setattr__(self, "data", data)

    def block(self, i: int, j: int) -> np.ndarray:
        """Lag profile of the (output i, input j) coefficient block."""
        b = (i * self.p + j) * self.T
        return self.data[b : b + self.T]


@dataclass(frozen=True)
class CoefficientTensor:
    """Predictor coefficients as T lag matrices of size p x p.

    coeffs[k][i, j] multiplies channel j delayed by k+1 samples in the
    prediction of channel i.
    """

    p: int
    T: int
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (self.T, self.p, self.p):
            raise ValueError(
                f"coeffs must have shape ({self.T}, {self.p}, {self.p}), got {coeffs.shape}"
            )
        object.__setattr__(self, "coeffs", coeffs)


def theta_to_tensor(theta: ThetaVector) -> CoefficientTensor:
    """Unflatten theta into lag matrices."""
    cube = theta.data.reshape(theta.p, theta.p, theta.T)
    return CoefficientTensor(theta.p, theta.T, np.ascontiguousarray(cube.transpose(2, 0, 1)))


def tensor_to_theta(tensor: CoefficientTensor) -> ThetaVector:
    """Flatten lag matrices back into the canonical theta ordering."""
    data = np.ascontiguousarray(tensor.coeffs.transpose(1, 2, 0)).reshape(-1)
    return ThetaVector(tensor.p, tensor.T, data)


def stacked_lag_matrix(tensor: CoefficientTensor) -> np.ndarray:
    """Horizontal stack [G_1 G_2 ... G_T], the p x pT matrix whose rank reveals
    the number of shared factors."""
    return np.ascontiguousarray(tensor.coeffs.transpose(1, 0, 2)).reshape(
        tensor.p, tensor.T * tensor.p
    )


def stack_outputs(ts: TimeSeries) -> np.ndarray:
    """Channel-major stacking: all samples of channel 0, then channel 1, ..."""
    return np.ascontiguousarray(ts.values.T).reshape(-1)


def lagged_regressor(y: np.ndarray, T: int) -> np.ndarray:
    """N x T matrix of delayed copies of a scalar series.

    Row t (0-based) is [y(t-1), y(t-2), ..., y(t-T)] with zeros where the lag
    reaches before the start of the data, so row 0 is identically zero.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    N = y.shape[0]
    if T < 1:
        raise ValueError("T must be at least 1")
    out = np.zeros((N, T))
    for h in range(1, T + 1):
        if h < N:
            out[h:, h - 1] = y[: N - h]
    return out


def build_regressor(ts: TimeSeries, T: int) -> np.ndarray:
    """pN x p^2 T regression matrix: I_p kron [phi_1 ... phi_p]."""
    blocks = [lagged_regressor(ts.values[:, j], T) for j in range(ts.p)]
    R = np.hstack(blocks)
    Phi = np.zeros((ts.p * ts.N, ts.p * ts.p * T))
    for i in range(ts.p):
        Phi[i * ts.N : (i + 1) * ts.N, i * ts.p * T : (i + 1) * ts.p * T] = R
    return Phi


@dataclass(frozen=True)
class RegressionProblem:
    """A ready-to-solve regularized regression: Phi, stacked outputs, noise covariance."""

    Phi: np.ndarray
    yplus: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self) -> None:
        Phi = np.asarray(self.Phi, dtype=float)
        yplus = np.asarray(self.yplus, dtype=float).reshape(-1)
        Sigma = np.asarray(self.Sigma, dtype=float)
        p = Sigma.shape[0]
        if Sigma.shape != (p, p):
            raise ValueError("Sigma must be square")
        if not np.allclose(Sigma, Sigma.T, atol=1e-10 * max(1.0, np.abs(Sigma).max())):
            raise ValueError("Sigma must be symmetric")
        if Phi.shape[0] != yplus.shape[0]:
            raise ValueError("Phi and yplus disagree on the number of stacked samples")
        if Phi.shape[0] % p != 0:
            raise ValueError("stacked sample count must be a multiple of p")
        if Phi.shape[1] % (p * p) != 0:
            raise ValueError("coefficient count must be a multiple of p^2")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "yplus", yplus)
        object.__setattr__(self, "Sigma", Sigma)

    @property
    def p(self) -> int:
        return self.Sigma.shape[0]

    @property
    def N(self) -> int:
        return self.Phi.shape[0] // self.p

    @property
    def T(self) -> int:
        return self.Phi.shape[1] // (self.p * self.p)


def write_timeseries_csv(path: str | Path, ts: TimeSeries) -> None:
    """Write a series as CSV: header of channel names, one row per sample.

    Floats are written with 17 significant digits so the file round-trips
    bit-exactly through read_timeseries_csv.
    """
    names = ts.names if ts.names is not None else tuple(f"y{j + 1}" for j in range(ts.p))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in ts.values:
            writer.writerow([f"{x:.17g}" for x in row])


def read_timeseries_csv(path: str | Path) -> TimeSeries:
    """Read a series written by write_timeseries_csv."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = tuple(next(reader))
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(names):
                raise ValueError(f"{path}:{lineno}: expected {len(names)} columns")
            rows.append([float(x) for x in row])
    if not rows:
        raise ValueError(f"{path}: no samples")
    return TimeSeries(np.array(rows, dtype=float), names=names)
