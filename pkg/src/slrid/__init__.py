"""Sparse plus low-rank identification of multivariate time-series predictors.

The package identifies one-step predictor models y(t) = sum_k G_k y(t-k) + e(t)
whose coefficient sequence splits into a group-sparse part (direct channel
interactions) and a low-rank part (a few shared latent factors).  Estimation
is kernel-based regularized regression; sparsity pattern, factor count and
all kernel scales are selected by marginal-likelihood optimization.
"""

from ._linalg import NotSPDError
from .estimator import (
    PosteriorEstimate,
    estimate_noise_cov,
    posterior_estimate,
    predict_one_step,
)
from .evidence import (
    DEFAULT_TAU_GRID,
    EvidenceWorkspace,
    HyperParams,
    KernelType,
    OptimizeResult,
    TauEstimate,
    estimate_tau,
    kernel_matrices,
    nll,
    nll_grad,
    optimize_hyperparams,
)
from .kernels import (
    BaseKernelParams,
    LowRankPrior,
    build_base_kernel,
    build_lowrank_kernel_type1,
    build_lowrank_kernel_type2,
    build_sparse_kernel,
    is_psd,
    resonance_filter,
)
from .metrics import cod1, complexity, impulse_response_fit
from .regressor import (
    CoefficientTensor,
    RegressionProblem,
    ThetaVector,
    TimeSeries,
    build_regressor,
    lagged_regressor,
    read_timeseries_csv,
    stack_outputs,
    stacked_lag_matrix,
    tensor_to_theta,
    theta_to_tensor,
    write_timeseries_csv,
)
from .simulation import (
    GroundTruthModel,
    SimConfig,
    gen_generic_model,
    gen_sl_model,
    simulate,
)
from .slr_algorithm import (
    AlgoConfig,
    IdentResult,
    NetworkTopology,
    VARIANTS,
    extract_network,
    fit_sparse_only,
    fit_unstructured,
    identify,
    run_rank_selection,
    subspace_update,
)

__version__ = "0.1.0"
