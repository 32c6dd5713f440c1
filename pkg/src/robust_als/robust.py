"""Robust statistics: MAD scale, innovation outlier flags, Huber IRLS."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

MAD_FACTOR = 1.4826


@dataclass(frozen=True)
class HuberConfig:
    """Tuning for :func:`irls_solve`.

    ``delta_override`` fixes the Huber threshold; otherwise it is
    ``c * MAD-scale`` of the initial residuals.
    """

    c: float = 1.345
    mad_factor: float = MAD_FACTOR
    max_iterations: int = 30
    tol: float = 1e-5
    delta_override: float | None = None

    def __post_init__(self):
        if self.c <= 0 or self.mad_factor <= 0 or self.tol <= 0:
            raise ValueError("Huber constants must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.delta_override is not None and self.delta_override <= 0:
            raise ValueError("delta_override must be positive")


@dataclass(frozen=True)
class IrlsResult:
    theta: np.ndarray
    weights: np.ndarray
    iterations: int
    objective_trace: np.ndarray  # objective at theta0, theta1, ...
    converged: bool
    delta_used: float


@dataclass(frozen=True)
class OutlierDetection:
    flagged: np.ndarray  # sorted 0-based time indices
    scale: np.ndarray  # robust innovation scale per channel
    degenerate: bool


def mad_scale(values, factor: float = MAD_FACTOR) -> float:
    """``factor * median(|x - median(x)|)``."""
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("mad_scale needs at least one value")
    return float(factor * np.median(np.abs(x - np.median(x))))


def detect_innovation_outliers(innovations, gamma_thr: float = 3.5) -> OutlierDetection:
    """Flag time steps where ``|e_k| > gamma_thr * sigma_e`` on any channel.

    ``sigma_e`` is the MAD scale of each channel. A channel with zero scale
    but nonzero innovations flags nothing and marks the result degenerate.
    """
    e = np.asarray(innovations, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    if len(e) < 3:
        raise ValueError("outlier detection needs at least 3 innovations")
    flags = np.zeros(len(e), dtype=bool)
    scales = np.empty(e.shape[1])
    degenerate = False
    for ch in range(e.shape[1]):
        s = mad_scale(e[:, ch])
        scales[ch] = s
        if s == 0.0:
            if np.any(e[:, ch] != 0.0):
                warnings.warn("innovation scale is zero; no outliers flagged", RuntimeWarning, stacklevel=2)
            degenerate = True
            continue
        flags |= np.abs(e[:, ch]) > gamma_thr * s
    return OutlierDetection(flagged=np.flatnonzero(flags), scale=scales, degenerate=degenerate)


def huber_loss(r, delta: float):
    r = np.abs(np.asarray(r, dtype=float))
    out = np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))
    return out if out.ndim else float(out)


def huber_weight(r, delta: float):
    r = np.abs(np.asarray(r, dtype=float))
    with np.errstate(divide="ignore"):
        out = np.where(r <= delta, 1.0, delta / np.where(r == 0.0, 1.0, r))
    return out if out.ndim else float(out)


def irls_solve(A, b, config: HuberConfig | None = None, theta0=None) -> IrlsResult:
    """Huber M-estimate of ``A theta ~ b`` by iteratively reweighted least squares.

    Weights for iteration ``t`` come from the residuals of ``theta^(t-1)``;
    each step solves the weighted problem through ``lstsq`` on the
    row-scaled system. Stops when the objective or the parameters change by
    less than ``tol``, or after ``max_iterations``.
    """
    config = config or HuberConfig()
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    m, p = A.shape
    if theta0 is None:
        theta0 = np.linalg.lstsq(A, b, rcond=None)[0]
    theta = np.asarray(theta0, dtype=float).reshape(-1).copy()
    if theta.size != p:
        raise ValueError(f"theta0 has length {theta.size}, expected {p}")

    r = b - A @ theta
    if config.delta_override is not None:
        delta = float(config.delta_override)
    else:
        delta = config.c * mad_scale(r, config.mad_factor)
        if delta <= 0.0:
            delta = max(1e-12, 1e-6 * float(np.max(np.abs(b), initial=0.0)))
            warnings.warn(f"zero residual scale; Huber threshold set to {delta:.3g}", RuntimeWarning, stacklevel=2)

    obj = float(np.sum(huber_loss(r, delta)))
    trace = [obj]
    converged = False
    t = 0
    while t < config.max_iterations:
        t += 1
        w = huber_weight(r, delta)
        sw = np.sqrt(w)
        Aw = A * sw[:, None]
        theta_new, _, rank, _ = np.linalg.lstsq(Aw, b * sw, rcond=None)
        if rank < p:
            raise np.linalg.LinAlgError(f"weighted normal matrix is singular (rank {rank} of {p})")
        r_new = b - A @ theta_new
        obj_new = float(np.sum(huber_loss(r_new, delta)))
        if obj_new > obj:
            # round-off at the fixed point; keep the better iterate
            converged = True
            break
        step = float(np.max(np.abs(theta_new - theta)))
        d_obj = obj - obj_new
        theta, r, obj = theta_new, r_new, obj_new
        trace.append(obj)
        if d_obj < config.tol or step < config.tol:
            converged = True
            break

    return IrlsResult(
        theta=theta,
        weights=huber_weight(r, delta),
        iterations=t,
        objective_trace=np.asarray(trace),
        converged=converged,
        delta_used=delta,
    )
