"""Randomized check that the ALS design matrix reproduces the model-implied
innovation autocovariances exactly."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .als import build_design_matrix, pack_theta, theoretical_autocov
from .kalman import steady_state_gain
from .ssm import NoiseCovariances, StateSpaceModel, spectral_radius

IDENTITY_TOL = 1e-10


def random_psd(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    L = rng.standard_normal((n, n if rank is None else rank))
    return L @ L.T


def random_stable_system(rng: np.random.Generator, n_x: int, n_z: int, n_w: int, radius: float = 0.9):
    F = rng.standard_normal((n_x, n_x))
    rho = spectral_radius(F)
    if rho > 0:
        F *= rng.uniform(0.05, radius) / rho
    return StateSpaceModel(F=F, Gw=rng.standard_normal((n_x, n_w)), H=rng.standard_normal((n_z, n_x)))


@dataclass(frozen=True)
class OracleReport:
    n_systems: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < IDENTITY_TOL


def oracle_identity_check(n_systems: int = 200, seed: int = 0) -> OracleReport:
    """Compare ``A theta`` with the Lyapunov-based autocovariances on random systems."""
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for _ in range(n_systems):
        n_x = int(rng.integers(1, 5))
        n_z = int(rng.integers(1, 3))
        n_w = int(rng.integers(1, n_x + 1))
        model = random_stable_system(rng, n_x, n_z, n_w)
        N = int(rng.integers(1, 16))
        gain_noise = NoiseCovariances(Q=random_psd(rng, n_w), R=random_psd(rng, n_z) + 0.1 * np.eye(n_z))
        K = steady_state_gain(model, gain_noise).K
        truth = NoiseCovariances(Q=random_psd(rng, n_w), R=random_psd(rng, n_z))
        b = theoretical_autocov(model, K, truth, N)
        with warnings.catch_warnings():
            # the identity holds whether or not the system is solvable
            warnings.simplefilter("ignore", RuntimeWarning)
            A = build_design_matrix(model, K, N).A
        worst = max(worst, float(np.linalg.norm(A @ pack_theta(truth) - b) / np.linalg.norm(b)))
    return OracleReport(n_systems=n_systems, max_rel_error=worst)
