"""Raking-ratio (iterative proportional fitting) on empirical measures and the
Gaussian limit theory of the raked empirical process."""

from .gaussian_limit import (
    GaussianLimitModel,
    check_cycle_monotonicity,
    covariance_gn,
    covariance_matrix,
    phi_vectors,
    product_constants,
    risk_ratio,
    sample_gn,
)
from .measures import (
    CellGrid,
    MarginalTarget,
    Partition,
    PiecewiseFunction,
    WeightedSample,
    ZeroProbabilityError,
    conditional_expectation,
    indicator,
    marginalize,
    transition_matrix,
)
from .raking import (
    EmptyMarginError,
    RakingSchedule,
    RakingState,
    exact_weights,
    kl_divergence,
    rake_step,
    rake_until_converged,
    verify_projection,
)
from .two_marginal import (
    ErgodicityError,
    TwoMarginalModel,
    g_infinity_covariance,
    gn_two_marginal_covariance,
    limit_s,
    s_matrices_finite,
    spectral_gap,
)

__version__ = "0.1.0"
