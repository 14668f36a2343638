"""Imputation of low-frequency series on a high-frequency grid using factor models."""
from .grid import (AggregationMap, Panel, TimeGrid, build_aggregation, build_time_grid, embed_low_frequency,
                   fixed_grid, standardize, unstandardize, weekly_mondays)
from .factors import FactorEstimate, VarDynamics, estimate, normalize
from .statespace import (ConvergenceError, DfmFit, StateSpaceModel, back_out_target_rho, build_ks_star,
                         build_method_a, build_method_b, em_dfm, factor_model, kalman_filter,
                         kalman_smoother)

__version__ = "0.1.0"

__all__ = [
    "AggregationMap", "Panel", "TimeGrid", "build_aggregation", "build_time_grid", "embed_low_frequency",
    "fixed_grid", "standardize", "unstandardize", "weekly_mondays",
    "FactorEstimate", "VarDynamics", "estimate", "normalize",
    "ConvergenceError", "DfmFit", "StateSpaceModel", "back_out_target_rho", "build_ks_star",
    "build_method_a", "build_method_b", "em_dfm", "factor_model", "kalman_filter", "kalman_smoother",
]
