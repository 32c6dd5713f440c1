"""Outlier-robust autocovariance least-squares identification of Kalman filter
noise covariances."""
from .als import (
    AlsDesign,
    AutocovEstimate,
    build_design_matrix,
    empirical_autocov,
    ols_solve,
    pack_theta,
    project_psd,
    theoretical_autocov,
    unpack_theta,
)
from .baselines import BaselineConfig, run_baseline
from .estimator import EstimationRun, EstimatorConfig, estimate
from .kalman import FilterRun, SteadyStateGain, run_kf, run_predictor, solve_residual_lyapunov, steady_state_gain
from .robust import HuberConfig, IrlsResult, detect_innovation_outliers, huber_loss, huber_weight, irls_solve, mad_scale
from .ssm import ContaminationSpec, NoiseCovariances, StateSpaceModel, TrajectoryBatch, simulate, validate_model

__version__ = "0.1.0"
