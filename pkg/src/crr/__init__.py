"""Penalized convoluted rank regression with debiased simultaneous inference."""

__version__ = "0.1.0"

from .kernels import (
    KERNEL_FAMILIES,
    KernelSpec,
    LossConfig,
    kernel_eval,
    loss,
    loss_by_quadrature,
    loss_prime,
    loss_prime_by_quadrature,
    loss_second,
)
from .solver import (
    Dataset,
    FitResult,
    PenaltySpec,
    default_lambda_grid,
    fit,
    gradient,
    lambda_max,
    objective,
    select_lambda_cv,
    select_lambda_hbic,
    standardize,
)
from .precision import (
    DebiasedResult,
    HessianEstimate,
    PrecisionEstimate,
    clime_rows,
    debias,
    default_gamma,
    hessian,
)
from .bootstrap import (
    BootstrapResult,
    PairScoreAggregate,
    SciResult,
    bootstrap,
    build_sci,
    pair_scores,
)
from .efficiency import (
    AreReport,
    CauchyLaw,
    CustomLaw,
    MixtureNormalLaw,
    NormalLaw,
    are_vs_composite,
    are_vs_cqr,
    are_vs_huber,
    are_vs_ols,
    variance_scalar,
)
from .simulate import (
    CoverageReport,
    Scenario,
    covariance_matrix,
    gen_dataset,
    kendall_screen,
    run_scenario,
)
