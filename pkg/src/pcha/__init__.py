"""Principal-component highly adaptive estimators (PC-HAR, PC-HAL, PC-HAGL).

The working model is built from the zero-order indicator basis with knots at
the training rows, reduced to the eigenvectors of its exact integer Gram
matrix, so every fit runs in n dimensions regardless of the N = n(2^d - 1)
basis functions.
"""

from .basis import BasisSpec, OracleCapError, build_kernel_matrix, design_matrix, kernel_cross
from .causal import CausalDataset, bootstrap_ci, eic, plugin_ate, undersmooth
from .experiments import (
    StudyConfig,
    StudyResult,
    estimate_slope,
    gen_additive,
    gen_ate,
    gen_oscillatory,
    resolve_config,
    run_study,
)
from .losses import LossKind
from .model_selection import CVPlan, CVResult, cv_select, default_grid, make_folds
from .pc import PCWorkingModel, beta_stats_streaming, beta_vector
from .rng import derive_seed
from .solvers import FittedEstimator, Mode, SolverConfig, fit_hagl, fit_hal, fit_har, fit_mode

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "OracleCapError", "build_kernel_matrix", "design_matrix", "kernel_cross",
    "CausalDataset", "bootstrap_ci", "eic", "plugin_ate", "undersmooth",
    "StudyConfig", "StudyResult", "estimate_slope", "gen_additive", "gen_ate",
    "gen_oscillatory", "resolve_config", "run_study",
    "LossKind", "CVPlan", "CVResult", "cv_select", "default_grid", "make_folds",
    "PCWorkingModel", "beta_stats_streaming", "beta_vector", "derive_seed",
    "FittedEstimator", "Mode", "SolverConfig", "fit_hagl", "fit_hal", "fit_har", "fit_mode",
]
