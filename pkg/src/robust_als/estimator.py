"""Batched ALS / ALS-IRLS estimation of (Q, R) from a measurement record."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .als import (
    build_design_matrix,
    empirical_autocov,
    ols_solve,
    project_psd,
    unpack_theta,
)
from .kalman import closed_loop_matrix, run_predictor, steady_state_gain
from .robust import HuberConfig, IrlsResult, detect_innovation_outliers, irls_solve
from .ssm import NoiseCovariances, StateSpaceModel, as_matrix, spectral_radius


class EstimationError(RuntimeError):
    """A batch of the outer loop failed; ``batch`` is the 0-based index."""

    def __init__(self, batch: int, cause: Exception):
        super().__init__(f"batch {batch}: {cause}")
        self.batch = batch
        self.cause = cause


@dataclass(frozen=True)
class EstimatorConfig:
    N: int = 15
    tau: int = 150
    warmup_length: int = 1500
    n_avg: int = 5
    Q0: float | np.ndarray = 2.0
    R0: float | np.ndarray = 1.0
    gamma_thr: float = 3.5
    huber: HuberConfig = field(default_factory=HuberConfig)
    cleaning_enabled: bool = True
    robust_enabled: bool = True
    outer_tolerance: float = 1e-3

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.warmup_length < self.tau_use:
            raise ValueError(f"warmup_length {self.warmup_length} shorter than one batch ({self.tau_use})")
        if not 1 <= self.n_avg <= self.n_batches:
            raise ValueError(f"n_avg must be in [1, {self.n_batches}], got {self.n_avg}")

    @property
    def tau_use(self) -> int:
        return max(self.tau, 3 * self.N)

    @property
    def n_batches(self) -> int:
        return self.warmup_length // self.tau_use

    @classmethod
    def plain_als(cls, **kw) -> "EstimatorConfig":
        """Non-robust baseline: no innovation cleaning, ordinary least squares."""
        return cls(cleaning_enabled=False, robust_enabled=False, **kw)


@dataclass(frozen=True)
class EstimationRun:
    per_batch_estimates: tuple[NoiseCovariances, ...]
    final: NoiseCovariances
    per_batch_flag_counts: tuple[int, ...]
    per_batch_irls: tuple[IrlsResult | None, ...]
    gains_used: tuple[np.ndarray, ...]

    @property
    def n_batches(self) -> int:
        return len(self.per_batch_estimates)


def floor_estimate(covs: NoiseCovariances) -> NoiseCovariances:
    """Project onto the PSD cone and keep ``R`` safely invertible."""
    covs = project_psd(covs)
    R = covs.R
    if R.size:
        lam, V = np.linalg.eigh(R)
        floor = 1e-8 * max(np.trace(R), 1.0)
        if lam.min() < floor:
            R = (V * np.maximum(lam, floor)) @ V.T
            R = 0.5 * (R + R.T)
    return NoiseCovariances(Q=covs.Q, R=R)


def _relative_change(new: NoiseCovariances, old: NoiseCovariances) -> float:
    out = 0.0
    for a, b in ((new.Q, old.Q), (new.R, old.R)):
        out = max(out, np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
    return out


def _mean_covs(items) -> NoiseCovariances:
    Q = np.mean([c.Q for c in items], axis=0)
    R = np.mean([c.R for c in items], axis=0)
    return project_psd(NoiseCovariances(Q=0.5 * (Q + Q.T), R=0.5 * (R + R.T)))


def _gain_for(model: StateSpaceModel, covs: NoiseCovariances):
    gain = steady_state_gain(model, covs)
    if not gain.converged or spectral_radius(closed_loop_matrix(model, gain.K)) >= 1.0:
        raise ValueError("steady-state gain did not yield a stable closed loop")
    return gain


def estimate(model: StateSpaceModel, measurements, config: EstimatorConfig | None = None, x0_pred=None) -> EstimationRun:
    """Estimate ``(Q, R)`` from the first ``warmup_length`` measurements.

    Each batch of ``tau_use`` samples is filtered with the steady-state gain
    of the current estimate, its innovations are (optionally) cleaned of
    outliers, and the ALS regression is solved by IRLS (or OLS when
    ``robust_enabled`` is off). The predictor state carries over between
    batches. The result averages the last ``n_avg`` batch estimates.
    """
    config = config or EstimatorConfig()
    z = np.asarray(measurements, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if len(z) < config.warmup_length:
        raise ValueError(f"need {config.warmup_length} measurements, got {len(z)}")

    current = floor_estimate(
        NoiseCovariances(Q=as_matrix(config.Q0, model.n_w), R=as_matrix(config.R0, model.n_z))
    )
    xp = np.zeros(model.n_x) if x0_pred is None else np.asarray(x0_pred, dtype=float)
    previous = None
    tau = config.tau_use
    estimates, flag_counts, irls_runs, gains = [], [], [], []

    for batch in range(config.n_batches):
        try:
            try:
                gain = _gain_for(model, current)
            except (ValueError, np.linalg.LinAlgError):
                if previous is None:
                    raise
                prev = previous
                current = floor_estimate(
                    NoiseCovariances(Q=0.5 * (current.Q + prev.Q), R=0.5 * (current.R + prev.R))
                )
                gain = _gain_for(model, current)
            K = gain.K
            design = build_design_matrix(model, K, config.N)
            run = run_predictor(model, K, z[batch * tau:(batch + 1) * tau], xp)
            xp = run.final_predicted_state
            if not np.all(np.isfinite(run.innovations)):
                raise ValueError("non-finite innovations")

            flagged = None
            if config.cleaning_enabled:
                flagged = detect_innovation_outliers(run.innovations, config.gamma_thr).flagged
            ac = empirical_autocov(run.innovations, config.N, flagged)

            theta = ols_solve(design, ac.b)
            irls = None
            if config.robust_enabled:
                irls = irls_solve(design.A, ac.b, config.huber, theta0=theta)
                theta = irls.theta
            est = floor_estimate(unpack_theta(theta, model.n_w, model.n_z))
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise EstimationError(batch, exc) from exc

        estimates.append(est)
        flag_counts.append(0 if flagged is None else len(flagged))
        irls_runs.append(irls)
        gains.append(K)
        done = len(estimates) >= config.n_avg and _relative_change(est, current) < config.outer_tolerance
        previous, current = current, est
        if done:
            break

    return EstimationRun(
        per_batch_estimates=tuple(estimates),
        final=_mean_covs(estimates[-config.n_avg:]),
        per_batch_flag_counts=tuple(flag_counts),
        per_batch_irls=tuple(irls_runs),
        gains_used=tuple(gains),
    )
