"""Sliding-window visual-inertial bundle adjustment with per-feature robust weights."""
from .odometry import OdometryInputError, OdometryResult, propagate, run_odometry, write_odometry
from .params import PROFILES, SolverParams
from .residuals import imu_residual, prior_residual, reprojection_residual
from .weights import converged_loss, loss_rho, loss_rho_m, optimal_weight, optimal_weight_momentum
from .window import (FeatureTrack, MarginalizationPrior, SlidingWindow, SolveReport, SolverDivergedError,
                     marginalize_oldest, schur_prior, solve_window)

__all__ = [
    "FeatureTrack", "MarginalizationPrior", "OdometryInputError", "OdometryResult", "PROFILES",
    "SlidingWindow", "SolveReport", "SolverDivergedError", "SolverParams", "converged_loss", "imu_residual",
    "loss_rho", "loss_rho_m", "marginalize_oldest", "optimal_weight", "optimal_weight_momentum",
    "prior_residual", "propagate", "reprojection_residual", "run_odometry", "schur_prior", "solve_window",
    "write_odometry",
]
