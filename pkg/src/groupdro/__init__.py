"""Group-structured distributionally robust regression.

Group square-root lasso and group lasso logistic regression, their
worst-case (Wasserstein) risk duality, and penalty selection from the
robust Wasserstein profile limit laws (RWPI).
"""
from .cv_baseline import CvResult, cross_validate, default_grid
from .data_gen import SimulationConfig, load_csv, simulate, simulate_pair
from .dro_adversary import (
    CostSpec,
    DiscreteMeasure,
    adversary_lower_bound,
    rwp_primal_estimate,
    transport_discrepancy,
    worst_case_linear,
    worst_case_logistic,
)
from .estimators import GroupLassoLogistic, GroupSquareRootLasso
from .group_norm import GroupPartition, NormSpec, dual_spec, dual_witness, group_norm
from .rwpi_select import (
    estimate_covariance,
    lambda_linear,
    lambda_logistic,
    sample_dual_gaussian_norm,
    sample_L1,
    sample_L2,
    select_lambda,
)
from .solvers import (
    Dataset,
    DegenerateFitError,
    ModelFit,
    SolverOptions,
    fit_group_lasso_linear,
    fit_grlasso_logistic,
    fit_gsrl_linear,
    group_prox,
)

__all__ = [
    "CvResult",
    "cross_validate",
    "default_grid",
    "SimulationConfig",
    "load_csv",
    "simulate",
    "simulate_pair",
    "CostSpec",
    "DiscreteMeasure",
    "adversary_lower_bound",
    "rwp_primal_estimate",
    "transport_discrepancy",
    "worst_case_linear",
    "worst_case_logistic",
    "GroupLassoLogistic",
    "GroupSquareRootLasso",
    "GroupPartition",
    "NormSpec",
    "dual_spec",
    "dual_witness",
    "group_norm",
    "estimate_covariance",
    "lambda_linear",
    "lambda_logistic",
    "sample_dual_gaussian_norm",
    "sample_L1",
    "sample_L2",
    "select_lambda",
    "Dataset",
    "DegenerateFitError",
    "ModelFit",
    "SolverOptions",
    "fit_group_lasso_linear",
    "fit_grlasso_logistic",
    "fit_gsrl_linear",
    "group_prox",
]

__version__ = "0.1.0"
