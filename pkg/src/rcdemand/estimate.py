"""Estimators: Tikhonov NPIV for psi and simulated GMM for bundle models."""

from .gmm import (PAIRS, PARAMETER_NAMES, BundleShareSimulator, GmmResult, GmmSpec,
                  MomentState, gmm_criterion, gmm_estimate, invert_pairs, moment_contributions,
                  simulation_nodes, start_points, weight_matrix)
from .npiv import (IllPosedError, NpivFit, NpivProblem, SplineBasis, npiv_fit, npiv_problem,
                   panel_arguments, series_operator)
from .panel import MarketPanel, PanelConfig, generate_panel

__all__ = [
    "BundleShareSimulator", "GmmResult", "GmmSpec", "IllPosedError", "MarketPanel",
    "MomentState", "NpivFit", "NpivProblem", "PAIRS", "PARAMETER_NAMES", "PanelConfig",
    "SplineBasis", "generate_panel", "gmm_criterion", "gmm_estimate", "invert_pairs",
    "moment_contributions", "npiv_fit", "npiv_problem", "panel_arguments", "series_operator",
    "simulation_nodes", "start_points", "weight_matrix",
]
