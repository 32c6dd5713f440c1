"""Comparison filters for the evaluation phase.

``mckf`` and ``student_t`` are compact textbook versions of the
maximum-correntropy and Student-t measurement updates. Their tuning
(kernel bandwidth, degrees of freedom) is exposed rather than fitted.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .kalman import FilterRun, run_kf
from .ssm import NoiseCovariances, StateSpaceModel, as_matrix

MCKF_INNER_TOL = 1e-6


class Method(str, Enum):
    ORACLE = "oracle"
    FIXED = "fixed"
    MCKF = "mckf"
    STUDENT_T = "student_t"


@dataclass(frozen=True)
class BaselineConfig:
    method: Method = Method.FIXED
    fixed_Q: float | np.ndarray = 0.3
    fixed_R: float | np.ndarray = 0.1
    mckf_bandwidth: float = 5.0
    mckf_max_fixed_point: int = 10
    student_dof: float = 3.0
    student_vb_iterations: int = 5

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.mckf_bandwidth <= 0:
            raise ValueError("mckf_bandwidth must be positive")
        if self.student_dof <= 2:
            raise ValueError("student_dof must exceed 2")
        if self.mckf_max_fixed_point < 1 or self.student_vb_iterations < 1:
            raise ValueError("iteration counts must be >= 1")

    def fixed_noise(self, model: StateSpaceModel) -> NoiseCovariances:
        return NoiseCovariances(Q=as_matrix(self.fixed_Q, model.n_w), R=as_matrix(self.fixed_R, model.n_z))


def correntropy_loss(d: np.ndarray, bandwidth: float) -> float:
    """Correntropy-induced loss ``sum(1 - exp(-d^2 / 2 sigma^2))`` of whitened residuals."""
    return float(np.sum(1.0 - np.exp(-0.5 * (d / bandwidth) ** 2)))


def mckf_update(x_pred, P_pred, z, H, R, bandwidth, max_iter, tol=MCKF_INNER_TOL, trace=None):
    """Fixed-point maximum-correntropy measurement update.

    Whitened prior and measurement residuals receive Gaussian-kernel weights;
    each pass solves the reweighted least-squares problem in information
    form, which stays well posed when a measurement weight underflows to 0.
    If ``trace`` is a list, the correntropy loss of every iterate is
    appended to it.
    """
    n = len(x_pred)
    Bp = np.linalg.cholesky(P_pred)
    Br = np.linalg.cholesky(R)
    Wx = np.linalg.inv(Bp)  # whitens the prior residual
    Br_inv = np.linalg.inv(Br)
    Wz = Br_inv @ H

    def residuals(x):
        return Wx @ (x_pred - x), Br_inv @ (z - H @ x)

    x = x_pred.copy()
    for _ in range(max_iter):
        dx, dz = residuals(x)
        if trace is not None:
            trace.append(correntropy_loss(np.concatenate([dx, dz]), bandwidth))
        cx = np.exp(-0.5 * (dx / bandwidth) ** 2)
        cz = np.exp(-0.5 * (dz / bandwidth) ** 2)
        info = Wx.T @ (cx[:, None] * Wx) + Wz.T @ (cz[:, None] * Wz)
        rhs = Wx.T @ (cx * (Wx @ x_pred)) + Wz.T @ (cz * (Br_inv @ z))
        try:
            x_new = np.linalg.solve(info, rhs)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("MCKF inner information matrix is singular") from exc
        change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1e-12)
        x = x_new
        if change <= tol:
            break
    if trace is not None:
        dx, dz = residuals(x)
        trace.append(correntropy_loss(np.concatenate([dx, dz]), bandwidth))

    # gain implied by the final weights, used for the covariance update
    dx, dz = residuals(x)
    cx = np.exp(-0.5 * (dx / bandwidth) ** 2)
    cz = np.exp(-0.5 * (dz / bandwidth) ** 2)
    info_R = Br_inv.T @ (cz[:, None] * Br_inv)
    K = np.linalg.solve(Wx.T @ (cx[:, None] * Wx) + H.T @ info_R @ H, H.T @ info_R)
    IKH = np.eye(n) - K @ H
    P = IKH @ P_pred @ IKH.T + K @ R @ K.T
    return x, 0.5 * (P + P.T)


def student_t_update(x_pred, P_pred, z, H, R, dof, iterations):
    """Measurement update with ``R`` rescaled by a Student-t precision weight.

    The weight ``lam = (dof + n_z) / (dof + e^T S^-1 e)`` is iterated with
    ``S = H P H^T + R / lam``, starting from ``lam = 1``.
    """
    n_z = len(z)
    e = z - H @ x_pred
    lam = 1.0
    for _ in range(iterations):
        S = H @ P_pred @ H.T + R / lam
        m2 = float(e @ np.linalg.solve(S, e))
        lam = (dof + n_z) / (dof + m2)
    R_eff = R / lam
    S = H @ P_pred @ H.T + R_eff
    K = np.linalg.solve(S, H @ P_pred).T
    x = x_pred + K @ e
    IKH = np.eye(len(x_pred)) - K @ H
    P = IKH @ P_pred @ IKH.T + K @ R_eff @ K.T
    return x, 0.5 * (P + P.T)


def _run_robust(model, noise, measurements, x0, P0, update) -> FilterRun:
    F, Gw, H = model.F, model.Gw, model.H
    z = np.asarray(measurements, dtype=float).reshape(-1, model.n_z)
    n = model.n_x
    T = len(z)
    xp = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    P = np.eye(n) if P0 is None else np.asarray(P0, dtype=float).reshape(n, n)
    GQG = Gw @ noise.Q @ Gw.T
    innov = np.empty((T, model.n_z))
    pred = np.empty((T, n))
    filt = np.empty((T, n))
    for k in range(T):
        pred[k] = xp
        innov[k] = z[k] - H @ xp
        xf, Pf = update(xp, P, z[k], H, noise.R)
        filt[k] = xf
        xp = F @ xf
        P = F @ Pf @ F.T + GQG
        P = 0.5 * (P + P.T)
    return FilterRun(innovations=innov, predicted_states=pred, filtered_states=filt, final_predicted_state=xp)


def run_baseline(
    model: StateSpaceModel,
    config: BaselineConfig,
    measurements,
    x0=None,
    P0=None,
    true_noise: NoiseCovariances | None = None,
) -> FilterRun:
    """Run one comparison filter; ``oracle`` needs ``true_noise``."""
    if config.method is Method.ORACLE:
        if true_noise is None:
            raise ValueError("oracle baseline needs the true noise covariances")
        return run_kf(model, true_noise, measurements, x0, P0)
    noise = config.fixed_noise(model)
    if config.method is Method.FIXED:
        return run_kf(model, noise, measurements, x0, P0)
    if config.method is Method.MCKF:
        def update(xp, P, z, H, R):
            return mckf_update(xp, P, z, H, R, config.mckf_bandwidth, config.mckf_max_fixed_point)
    else:
        def update(xp, P, z, H, R):
            return student_t_update(xp, P, z, H, R, config.student_dof, config.student_vb_iterations)
    return _run_robust(model, noise, measurements, x0, P0, update)
