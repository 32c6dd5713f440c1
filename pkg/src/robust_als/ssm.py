"""Linear time-invariant state-space model and trajectory simulation.

Random draws use numpy's ``PCG64`` bit generator seeded directly with the
caller's 64-bit seed, so identical inputs reproduce bit-identical output on
any platform numpy supports.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SYM_RTOL = 1e-12
_PSD_TOL = 1e-10


def as_matrix(value, n: int = 1) -> np.ndarray:
    """Coerce a scalar or matrix to a 2-D float array; a scalar becomes ``value * I_n``."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(n)
    return np.atleast_2d(arr)


def spectral_radius(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass(frozen=True)
class StateSpaceModel:
    """LTI system ``x[k+1] = F x[k] + Gw w[k]``, ``z[k] = H x[k] + v[k]``."""

    F: np.ndarray
    Gw: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        Gw = np.asarray(self.Gw, dtype=float)
        if Gw.ndim == 1:
            Gw = Gw.reshape(-1, 1)
        Gw = np.atleast_2d(Gw)
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if F.shape[0] != F.shape[1]:
            raise ValueError(f"F must be square, got {F.shape}")
        if Gw.shape[0] != F.shape[0]:
            raise ValueError(f"Gw has {Gw.shape[0]} rows, expected n_x={F.shape[0]}")
        if H.shape[1] != F.shape[0]:
            raise ValueError(f"H has {H.shape[1]} columns, expected n_x={F.shape[0]}")
        for name, arr in (("F", F), ("Gw", Gw), ("H", H)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_x(self) -> int:
        return self.F.shape[0]

    @property
    def n_w(self) -> int:
        return self.Gw.shape[1]

    @property
    def n_z(self) -> int:
        return self.H.shape[0]

    @classmethod
    def benchmark(cls) -> "StateSpaceModel":
        """Third-order benchmark system with a scalar process-noise input."""
        F = [[0.1, 0.0, 0.1], [0.0, 0.2, 0.0], [0.0, 0.0, 0.3]]
        return cls(F=F, Gw=[[1.0], [2.0], [3.0]], H=[[0.1, 0.2, 0.0]])


@dataclass(frozen=True)
class NoiseCovariances:
    """Process-noise covariance ``Q`` (n_w x n_w) and measurement covariance ``R``.

    Construction enforces shape and symmetry. Positive semidefiniteness is
    checked by :meth:`is_psd`, since unprojected regression output may
    legitimately be indefinite.
    """

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if M.shape[0] != M.shape[1]:
                raise ValueError(f"{name} must be square, got {M.shape}")
            scale = max(np.max(np.abs(M)), 1e-300) if M.size else 1.0
            if np.max(np.abs(M - M.T), initial=0.0) > _SYM_RTOL * scale:
                raise ValueError(f"{name} is not symmetric")
            M = M.copy()
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @classmethod
    def scalar(cls, q: float, r: float) -> "NoiseCovariances":
        return cls(Q=[[q]], R=[[r]])

    def is_psd(self) -> bool:
        for M in (self.Q, self.R):
            if M.size == 0:
                continue
            tol = _PSD_TOL * max(abs(np.trace(M)), 1e-300)
            if np.linalg.eigvalsh(M).min() < -tol:
                return False
        return True


@dataclass(frozen=True)
class ContaminationSpec:
    """Each measurement gets ``gamma ~ N(0, omega^2 R)`` added with probability ``epsilon``."""

    epsilon: float = 0.15
    omega: float = 8.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        # omega = 0 is accepted so flag placement can be checked against the clean stream.
        if self.omega < 0.0:
            raise ValueError(f"omega must be positive, got {self.omega}")


@dataclass(frozen=True)
class TrajectoryBatch:
    states: np.ndarray  # (T, n_x)
    measurements: np.ndarray  # (T, n_z)
    outlier_flags: np.ndarray  # (T,) bool
    seed: int

    def __post_init__(self):
        T = len(self.states)
        if T < 1 or len(self.measurements) != T or len(self.outlier_flags) != T:
            raise ValueError("states, measurements and flags must share a length >= 1")

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class ModelReport:
    spectral_radius: float
    stable: bool
    dimensions_ok: bool
    messages: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return self.stable and self.dimensions_ok


def validate_model(model: StateSpaceModel) -> ModelReport:
    """Report the spectral radius of ``F`` and whether it is below one.

    Dimension mismatches are rejected when the model is constructed, so a
    model that reaches this point always has consistent dimensions.
    """
    rho = spectral_radius(model.F)
    msgs = () if rho < 1.0 else (f"spectral radius of F is {rho:.6g} >= 1",)
    return ModelReport(spectral_radius=rho, stable=rho < 1.0, dimensions_ok=True, messages=msgs)


def noise_factor(M: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Return ``L`` with ``L @ L.T == M`` for a symmetric PSD matrix.

    Uses Cholesky where possible; semidefinite inputs fall back to an
    eigen-factor with eigenvalues floored at zero.
    """
    M = 0.5 * (M + M.T)
    if M.size == 0:
        return M
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    lam, V = np.linalg.eigh(M)
    tol = _PSD_TOL * max(abs(np.trace(M)), 1.0)
    if lam.min() < -tol:
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {lam.min():.3g})")
    return V * np.sqrt(np.clip(lam, 0.0, None))


def simulate(
    model: StateSpaceModel,
    noise: NoiseCovariances,
    contamination: ContaminationSpec | None,
    x0,
    length: int,
    seed: int,
) -> TrajectoryBatch:
    """Simulate ``length`` steps starting from state ``x0`` (the first recorded state).

    The random stream is consumed in a fixed order regardless of the
    contamination settings (process noise, measurement noise, outlier
    uniforms, outlier normals), so two runs with the same seed differ only
    in the contamination term.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if noise.Q.shape != (model.n_w, model.n_w) or noise.R.shape != (model.n_z, model.n_z):
        raise ValueError("noise covariance shapes do not match the model")
    Lq = noise_factor(noise.Q, "Q")
    Lr = noise_factor(noise.R, "R")

    rng = np.random.Generator(np.random.PCG64(seed))
    w = rng.standard_normal((length, model.n_w)) @ Lq.T
    v = rng.standard_normal((length, model.n_z)) @ Lr.T
    u = rng.random(length)
    g = rng.standard_normal((length, model.n_z)) @ Lr.T

    if contamination is None:
        flags = np.zeros(length, dtype=bool)
    else:
        flags = u < contamination.epsilon

    F, Gw, H = model.F, model.Gw, model.H
    x = np.asarray(x0, dtype=float).reshape(model.n_x)
    states = np.empty((length, model.n_x))
    z = np.empty((length, model.n_z))
    for k in range(length):
        states[k] = x
        z[k] = H @ x + v[k]
        x = F @ x + Gw @ w[k]
    if contamination is not None:
        z = z + flags[:, None] * (contamination.omega * g)
    return TrajectoryBatch(states=states, measurements=z, outlier_flags=flags, seed=seed)
