"""Heterogeneous causal mediation: estimation, inference, and simulation.

Estimates covariate-conditional indirect (cAIE) and direct (cADE)
treatment effects in a linear structural-equation mediation system, by
ordinary least squares or a structured generalized lasso, with plug-in
Wald intervals or multiple sample-splitting intervals.
"""

from .core_model import (
    Dataset,
    JointDesign,
    ThetaParams,
    build_joint_design,
    dataset_from_arrays,
    load_table,
    standardize_continuous,
    validate_dataset,
)
from .inference import (
    AsymptoticCovariance,
    SplitInference,
    estimate_covariance,
    select_and_refit,
    split_inference,
    wald_ci,
    wald_effects,
)
from .mediation import (
    EffectRequest,
    EffectTable,
    cade,
    caie,
    effect_table,
    effects_at,
    population_average,
    tau,
)
from .profiling import SubgroupReport, subgroup_report
from .simulation import DgpConfig, SimReport, generate, run_study
from .solvers import (
    FitResult,
    SolverOptions,
    TuningTrace,
    fit_genlasso,
    fit_ols,
    fit_ridge,
    lambda_max,
    tune_cp,
)
from .stacker import PhiPair, StackedDesign, build_penalty, recover_phi, stack_model, theta_from_fits

__version__ = "0.1.0"

__all__ = [
    "AsymptoticCovariance",
    "Dataset",
    "EffectRequest",
    "DgpConfig",
    "EffectTable",
    "FitResult",
    "JointDesign",
    "PhiPair",
    "SimReport",
    "SolverOptions",
    "SplitInference",
    "StackedDesign",
    "SubgroupReport",
    "ThetaParams",
    "TuningTrace",
    "build_joint_design",
    "build_penalty",
    "cade",
    "caie",
    "dataset_from_arrays",
    "effect_table",
    "effects_at",
    "population_average",
    "estimate_covariance",
    "fit_genlasso",
    "fit_ols",
    "fit_ridge",
    "generate",
    "lambda_max",
    "load_table",
    "recover_phi",
    "run_study",
    "select_and_refit",
    "split_inference",
    "stack_model",
    "standardize_continuous",
    "subgroup_report",
    "tau",
    "theta_from_fits",
    "tune_cp",
    "validate_dataset",
    "wald_ci",
    "wald_effects",
    "__version__",
]
