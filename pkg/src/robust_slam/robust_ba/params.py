from __future__ import annotations

from dataclasses import dataclass

MODES = ("baseline_huber", "robust_weights")


@dataclass(frozen=True)
class SolverParams:
    """Sliding-window solver settings.

    ``obs_sigma`` is the reprojection standard deviation (normalized image units).
    ``residual_scale`` divides every whitened residual (visual, inertial, priors)
    before it enters the objective. It leaves the weighted least-squares optimum
    unchanged but sets the residual level at which the feature-weight trade-off
    against ``lambda_w`` happens. The Huber threshold of the baseline acts on the
    unscaled per-observation residual.
    """

    lambda_w: float = 1.0
    lambda_m: float = 0.2
    window: int = 10
    max_alternations: int = 8
    max_inner: int = 10
    tol_w: float = 1e-3
    tol_x: float = 1e-6
    huber_delta: float = 1.0
    mode: str = "robust_weights"
    obs_sigma: float = 1.0 / 640.0
    residual_scale: float = 14.0
    init_damping: float = 1e-4
    max_damping: float = 1e8
    min_inverse_depth: float = 1e-3
    bias_prior_sigma: tuple = (0.05, 0.005)
    velocity_prior_sigma: float = 0.05
    bias_walk: tuple = (1e-3, 1e-4)

    def __post_init__(self):
        if not self.lambda_w > 0.0:
            raise ValueError("lambda_w must be > 0")
        if self.lambda_m < 0.0:
            raise ValueError("lambda_m must be >= 0")
        if self.window < 2:
            raise ValueError("window capacity must be >= 2")
        if not self.residual_scale > 0.0 or not self.obs_sigma > 0.0:
            raise ValueError("obs_sigma and residual_scale must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def robust(self) -> bool:
        return self.mode == "robust_weights"


PROFILES = {
    "viode_like": {"lambda_w": 1.0, "lambda_m": 0.2},
    "handheld_like": {"lambda_w": 1.0, "lambda_m": 1.0},
}
