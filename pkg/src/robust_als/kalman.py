"""Kalman filtering: steady-state gain, fixed-gain predictor, time-varying filter,
and the discrete Lyapunov solve for the one-step prediction-error covariance."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .ssm import NoiseCovariances, StateSpaceModel, spectral_radius

RICCATI_TOL = 1e-10
RICCATI_MAX_ITER = 10_000
_COND_LIMIT = 1e14


@dataclass(frozen=True)
class SteadyStateGain:
    K: np.ndarray  # (n_x, n_z) filter gain
    P_pred: np.ndarray  # (n_x, n_x) steady prediction-error covariance
    iterations: int
    converged: bool


@dataclass(frozen=True)
class FilterRun:
    innovations: np.ndarray  # (T, n_z)
    predicted_states: np.ndarray  # (T, n_x), x[k|k-1]
    filtered_states: np.ndarray  # (T, n_x), x[k|k]
    final_predicted_state: np.ndarray  # x[T|T-1], seeds the next batch
    gains: np.ndarray | None = None  # (T, n_x, n_z) for time-varying filters


def floor_measurement_cov(R: np.ndarray) -> np.ndarray:
    """Add ``1e-8 * max(trace(R), 1) * I`` when ``R`` is numerically singular."""
    R = 0.5 * (R + R.T)
    if R.size and np.linalg.eigvalsh(R).min() < 1e-10:
        R = R + 1e-8 * max(np.trace(R), 1.0) * np.eye(R.shape[0])
    return R


def _check_innovation_cov(S: np.ndarray) -> None:
    if np.linalg.cond(S) > _COND_LIMIT:
        raise np.linalg.LinAlgError(f"innovation covariance is singular (cond={np.linalg.cond(S):.3g})")


def steady_state_gain(
    model: StateSpaceModel,
    noise: NoiseCovariances,
    tol: float = RICCATI_TOL,
    max_iter: int = RICCATI_MAX_ITER,
) -> SteadyStateGain:
    """Iterate the prediction-form Riccati recursion to its fixed point.

    Starts from ``Gw Q Gw^T`` and stops once the Frobenius change falls below
    ``tol * (1 + ||P||)``. If the budget runs out the last iterate is returned
    with ``converged=False``.
    """
    F, Gw, H = model.F, model.Gw, model.H
    R = floor_measurement_cov(noise.R)
    GQG = Gw @ noise.Q @ Gw.T
    P = GQG.copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        S = H @ P @ H.T + R
        _check_innovation_cov(S)
        FPH = F @ P @ H.T
        P_new = F @ P @ F.T - FPH @ np.linalg.solve(S, FPH.T) + GQG
        P_new = 0.5 * (P_new + P_new.T)
        delta = np.linalg.norm(P_new - P)
        P = P_new
        if delta < tol * (1.0 + np.linalg.norm(P)):
            converged = True
            break
    S = H @ P @ H.T + R
    _check_innovation_cov(S)
    K = np.linalg.solve(S, H @ P).T
    return SteadyStateGain(K=K, P_pred=P, iterations=it, converged=converged)


def closed_loop_matrix(model: StateSpaceModel, K: np.ndarray) -> np.ndarray:
    """Prediction-error transition ``F - F K H``."""
    return model.F - model.F @ K @ model.H


def run_predictor(model: StateSpaceModel, K: np.ndarray, measurements, x0_pred=None) -> FilterRun:
    """Run the fixed-gain predictor ``x[k+1|k] = F (x[k|k-1] + K e[k])``."""
    F, H = model.F, model.H
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (model.n_x, model.n_z):
        raise ValueError(f"K has shape {K.shape}, expected {(model.n_x, model.n_z)}")
    if spectral_radius(closed_loop_matrix(model, K)) >= 1.0:
        warnings.warn("predictor closed loop F - FKH is not stable", RuntimeWarning, stacklevel=2)
    z = _as_measurements(measurements, model.n_z)
    T = len(z)
    xp = np.zeros(model.n_x) if x0_pred is None else np.asarray(x0_pred, dtype=float).reshape(model.n_x)
    innov = np.empty((T, model.n_z))
    pred = np.empty((T, model.n_x))
    filt = np.empty((T, model.n_x))
    for k in range(T):
        pred[k] = xp
        e = z[k] - H @ xp
        xf = xp + K @ e
        innov[k] = e
        filt[k] = xf
        xp = F @ xf
    return FilterRun(innovations=innov, predicted_states=pred, filtered_states=filt, final_predicted_state=xp)


def run_kf(model: StateSpaceModel, noise: NoiseCovariances, measurements, x0=None, P0=None) -> FilterRun:
    """Time-varying Kalman filter.

    ``x0`` and ``P0`` are the prior mean and covariance of the state at the
    first measurement, i.e. ``x[1|0]`` and ``P[1|0]``.
    """
    F, Gw, H = model.F, model.Gw, model.H
    Q, R = noise.Q, noise.R
    z = _as_measurements(measurements, model.n_z)
    T = len(z)
    n = model.n_x
    xp = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    P = np.zeros((n, n)) if P0 is None else np.asarray(P0, dtype=float).reshape(n, n)
    GQG = Gw @ Q @ Gw.T
    I = np.eye(n)
    innov = np.empty((T, model.n_z))
    pred = np.empty((T, n))
    filt = np.empty((T, n))
    gains = np.empty((T, n, model.n_z))
    for k in range(T):
        pred[k] = xp
        S = H @ P @ H.T + R
        _check_innovation_cov(S)
        K = np.linalg.solve(S, H @ P).T
        e = z[k] - H @ xp
        xf = xp + K @ e
        IKH = I - K @ H
        Pf = IKH @ P @ IKH.T + K @ R @ K.T
        innov[k] = e
        filt[k] = xf
        gains[k] = K
        xp = F @ xf
        P = F @ Pf @ F.T + GQG
        P = 0.5 * (P + P.T)
    return FilterRun(
        innovations=innov, predicted_states=pred, filtered_states=filt, final_predicted_state=xp, gains=gains
    )


def solve_residual_lyapunov(Fbar: np.ndarray, G: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """Solve ``P = Fbar P Fbar^T + G Sigma G^T`` by a vectorized direct solve."""
    Fbar = np.atleast_2d(np.asarray(Fbar, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    rho = spectral_radius(Fbar)
    if rho >= 1.0:
        raise ValueError(f"Lyapunov equation has no unique solution: spectral radius {rho:.6g} >= 1")
    n = Fbar.shape[0]
    src = G @ Sigma @ G.T
    lhs = np.eye(n * n) - np.kron(Fbar, Fbar)
    P = np.linalg.solve(lhs, src.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (P + P.T)


def _as_measurements(measurements, n_z: int) -> np.ndarray:
    z = np.asarray(measurements, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, n_z) if n_z > 1 else z.reshape(-1, 1)
    if z.shape[1] != n_z:
        raise ValueError(f"measurements have {z.shape[1]} channels, expected {n_z}")
    return z
