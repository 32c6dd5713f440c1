"""Autocovariance least-squares regression.

The observation vector stacks the lagged innovation autocovariances
``C_0, ..., C_{N-1}`` vertically into an ``(N n_z) x n_z`` matrix and takes its
column-major vectorization; the design matrix maps ``[vec(Q); vec(R)]`` onto
the same ordering.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .kalman import closed_loop_matrix, solve_residual_lyapunov
from .ssm import NoiseCovariances, StateSpaceModel, spectral_radius

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class AlsDesign:
    A: np.ndarray
    N: int
    model_fingerprint: str
    underdetermined: bool = False


@dataclass(frozen=True)
class AutocovEstimate:
    b: np.ndarray
    pair_counts: np.ndarray  # retained pairs per lag
    flagged_indices: np.ndarray  # 0-based, sorted

    def lag(self, j: int, n_z: int = 1) -> np.ndarray:
        """Return ``C_j`` as an ``n_z x n_z`` matrix."""
        C = self.b.reshape(-1, n_z, order="F")
        return C[j * n_z:(j + 1) * n_z]


def fingerprint(model: StateSpaceModel, K: np.ndarray) -> str:
    h = hashlib.sha256()
    for M in (model.F, model.Gw, model.H, np.asarray(K, dtype=float)):
        h.update(np.ascontiguousarray(M).tobytes())
        h.update(str(M.shape).encode())
    return h.hexdigest()[:16]


def _stable_closed_loop(model: StateSpaceModel, K: np.ndarray) -> np.ndarray:
    Fbar = closed_loop_matrix(model, K)
    rho = spectral_radius(Fbar)
    if rho >= 1.0:
        raise ValueError(f"closed loop F - FKH is unstable (spectral radius {rho:.6g})")
    return Fbar


def build_design_matrix(model: StateSpaceModel, K, N: int) -> AlsDesign:
    """Assemble the ALS design matrix for gain ``K`` and lag window ``N``.

    The Q block is ``D (Gw kron Gw)`` so that only the ``n_w x n_w`` noise
    entering through ``Gw`` is parameterized.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Fbar = _stable_closed_loop(model, K)
    F, Gw, H = model.F, model.Gw, model.H
    n_x, n_w, n_z = model.n_x, model.n_w, model.n_z
    FK = F @ K

    obs_blocks = []
    gam_blocks = [np.eye(n_z)]
    Fj = np.eye(n_x)
    for j in range(N):
        obs_blocks.append(H @ Fj)
        if j < N - 1:
            gam_blocks.append(-H @ Fj @ FK)
        Fj = Fj @ Fbar
    O = np.vstack(obs_blocks)
    Gamma = np.vstack(gam_blocks)

    D = np.kron(H, O) @ np.linalg.inv(np.eye(n_x * n_x) - np.kron(Fbar, Fbar))
    A = np.hstack([D @ np.kron(Gw, Gw), D @ np.kron(FK, FK) + np.kron(np.eye(n_z), Gamma)])
    under = A.shape[0] < A.shape[1]
    if under:
        warnings.warn(
            f"ALS system is underdetermined ({A.shape[0]} rows < {A.shape[1]} unknowns)",
            RuntimeWarning,
            stacklevel=2,
        )
    A.setflags(write=False)
    return AlsDesign(A=A, N=N, model_fingerprint=fingerprint(model, K), underdetermined=under)


def theoretical_autocov(model: StateSpaceModel, K, noise: NoiseCovariances, N: int) -> np.ndarray:
    """Model-implied stacked autocovariance vector of the innovations."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Fbar = _stable_closed_loop(model, K)
    H = model.H
    FK = model.F @ K
    G = np.hstack([model.Gw, -FK])
    P = solve_residual_lyapunov(Fbar, G, block_diag(noise.Q, noise.R))
    blocks = [H @ P @ H.T + noise.R]
    Fj_prev = np.eye(model.n_x)  # Fbar^(j-1)
    for _ in range(1, N):
        Fj = Fj_prev @ Fbar
        blocks.append(H @ Fj @ P @ H.T - H @ Fj_prev @ FK @ noise.R)
        Fj_prev = Fj
    return np.vstack(blocks).reshape(-1, order="F")


def empirical_autocov(innovations, N: int, flagged=None) -> AutocovEstimate:
    """Lagged sample autocovariances of the innovation sequence.

    A lag-``j`` product ``e[k+j] e[k]^T`` is dropped if either ``k`` or ``k+j``
    is in ``flagged`` (0-based); each lag is normalized by its retained count.
    """
    e = np.asarray(innovations, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    tau, n_z = e.shape
    if tau < N:
        raise ValueError(f"need at least N={N} innovations, got {tau}")
    keep = np.ones(tau, dtype=bool)
    flagged_idx = np.unique(np.asarray([] if flagged is None else list(flagged), dtype=int))
    if flagged_idx.size and (flagged_idx.min() < 0 or flagged_idx.max() >= tau):
        raise ValueError("flagged index out of range")
    keep[flagged_idx] = False
    e_kept = e * keep[:, None]

    blocks = []
    counts = np.empty(N, dtype=int)
    for j in range(N):
        pair_ok = keep[j:] & keep[:tau - j]
        n = int(pair_ok.sum())
        if n == 0:
            raise ValueError(f"all pairs flagged at lag {j}")
        counts[j] = n
        blocks.append(e_kept[j:].T @ e_kept[:tau - j] / n)
    b = np.vstack(blocks).reshape(-1, order="F")
    return AutocovEstimate(b=b, pair_counts=counts, flagged_indices=flagged_idx)


def ols_solve(design, b) -> np.ndarray:
    """Least-squares solution through an SVD of the design matrix.

    Underdetermined systems return the minimum-norm solution; a tall but
    rank-deficient (or badly conditioned) design raises.
    """
    A = np.asarray(getattr(design, "A", design), dtype=float)
    A = np.atleast_2d(A)
    b = np.asarray(b, dtype=float).reshape(-1)
    theta, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    if A.shape[0] >= A.shape[1]:
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        if rank < A.shape[1] or cond > _COND_LIMIT:
            raise np.linalg.LinAlgError(
                f"design matrix is rank deficient (numerical rank {rank} of {A.shape[1]})"
            )
    return theta


def pack_theta(covs: NoiseCovariances) -> np.ndarray:
    return np.concatenate([covs.Q.reshape(-1, order="F"), covs.R.reshape(-1, order="F")])


def unpack_theta(theta, n_w: int, n_z: int) -> NoiseCovariances:
    """Reshape ``[vec(Q); vec(R)]`` column-wise and symmetrize both blocks."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != n_w * n_w + n_z * n_z:
        raise ValueError(f"theta has length {theta.size}, expected {n_w * n_w + n_z * n_z}")
    Q = theta[:n_w * n_w].reshape(n_w, n_w, order="F")
    R = theta[n_w * n_w:].reshape(n_z, n_z, order="F")
    return NoiseCovariances(Q=0.5 * (Q + Q.T), R=0.5 * (R + R.T))


def _clip_psd(M: np.ndarray) -> np.ndarray:
    if M.size == 0:
        return M
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    if lam.min() >= 0.0:
        return 0.5 * (M + M.T)
    out = (V * np.clip(lam, 0.0, None)) @ V.T
    return 0.5 * (out + out.T)


def project_psd(covs: NoiseCovariances) -> NoiseCovariances:
    """Zero out negative eigenvalues of ``Q`` and ``R``."""
    return NoiseCovariances(Q=_clip_psd(covs.Q), R=_clip_psd(covs.R))
