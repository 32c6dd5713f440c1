"""Two-phase Monte Carlo study: contaminated warm-up estimation, then
outlier-free evaluation of the filters built from each covariance source."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .als import empirical_autocov
from .baselines import BaselineConfig, Method, run_baseline
from .estimator import EstimatorConfig, estimate
from .kalman import run_kf, run_predictor, steady_state_gain
from .robust import detect_innovation_outliers
from .ssm import ContaminationSpec, NoiseCovariances, StateSpaceModel, as_matrix, simulate

METHODS = ("oracle", "als_irls", "student_t", "mckf", "als")
ESTIMATED = ("als", "als_irls")
MAX_FAILURE_FRACTION = 0.05
_EVAL_SALT = 0x9E3779B97F4A7C15
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class ExperimentConfig:
    n_trials: int = 100
    base_seed: int = 0
    true_Q: float = 5.0
    true_R: float = 3.0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    contamination: ContaminationSpec = field(default_factory=ContaminationSpec)
    eval_length: int = 500
    P0_scale: float = 10.0
    methods: tuple[str, ...] = METHODS
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    eps_values: tuple[float, ...] = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
    N_values: tuple[int, ...] = (10, 15, 20, 25, 30, 40)
    model: StateSpaceModel = field(default_factory=StateSpaceModel.benchmark)

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.eval_length < 1:
            raise ValueError("eval_length must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")

    @property
    def true_noise(self) -> NoiseCovariances:
        m = self.model
        return NoiseCovariances(Q=as_matrix(self.true_Q, m.n_w), R=as_matrix(self.true_R, m.n_z))

    def trial_seed(self, trial_index: int) -> int:
        return (self.base_seed + trial_index) & _U64


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    seed: int
    estimates: dict[str, NoiseCovariances]  # covariance source per method
    sse: dict[str, float]  # summed squared state error over the evaluation phase
    eval_length: int
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class MethodSummary:
    rmse_Q: float
    rmse_R: float
    mean_Q: np.ndarray
    mean_R: np.ndarray
    rmse_state: float


@dataclass(frozen=True)
class McSummary:
    methods: dict[str, MethodSummary]
    trials: tuple[TrialRecord, ...]
    n_failed: int

    def __getitem__(self, method: str) -> MethodSummary:
        return self.methods[method]


def _simulate_trial(config: ExperimentConfig, seed: int):
    m = config.model
    warm = simulate(
        m, config.true_noise, config.contamination, np.zeros(m.n_x), config.estimator.warmup_length, seed
    )
    ev = simulate(m, config.true_noise, None, warm.states[-1], config.eval_length, seed ^ _EVAL_SALT)
    return warm, ev


def run_trial(config: ExperimentConfig, trial_index: int) -> TrialRecord:
    """One warm-up/evaluation trial. Failures are recorded, not raised."""
    seed = config.trial_seed(trial_index)
    try:
        return _run_trial(config, trial_index, seed)
    except Exception as exc:  # noqa: BLE001 - recorded and counted by the aggregator
        return TrialRecord(trial_index, seed, {}, {}, config.eval_length, error=f"{type(exc).__name__}: {exc}")


def _run_trial(config: ExperimentConfig, trial_index: int, seed: int) -> TrialRecord:
    m = config.model
    warm, ev = _simulate_trial(config, seed)
    sources: dict[str, NoiseCovariances] = {}
    for method in config.methods:
        if method == "als_irls":
            est_cfg = replace(config.estimator, cleaning_enabled=True, robust_enabled=True)
            sources[method] = estimate(m, warm.measurements, est_cfg).final
        elif method == "als":
            est_cfg = replace(config.estimator, cleaning_enabled=False, robust_enabled=False)
            sources[method] = estimate(m, warm.measurements, est_cfg).final
        elif method == "oracle":
            sources[method] = config.true_noise
        else:
            sources[method] = config.baseline.fixed_noise(m)

    x0 = np.zeros(m.n_x)
    P0 = config.P0_scale * np.eye(m.n_x)
    sse = {}
    for method in config.methods:
        if method in ("student_t", "mckf"):
            bcfg = replace(config.baseline, method=Method(method))
            run = run_baseline(m, bcfg, ev.measurements, x0, P0)
        else:
            run = run_kf(m, sources[method], ev.measurements, x0, P0)
        sse[method] = math.fsum(np.sum((ev.states - run.filtered_states) ** 2, axis=1))
    return TrialRecord(trial_index, seed, sources, sse, config.eval_length)


def summarize(config: ExperimentConfig, trials: Iterable[TrialRecord]) -> McSummary:
    """Aggregate trial records with exactly rounded sums, so order does not matter."""
    trials = tuple(sorted(trials, key=lambda t: t.trial_index))
    ok = [t for t in trials if not t.failed]
    n_failed = len(trials) - len(ok)
    if n_failed > MAX_FAILURE_FRACTION * len(trials):
        errors = "; ".join(t.error for t in trials if t.failed)
        raise RuntimeError(f"{n_failed} of {len(trials)} trials failed: {errors}")
    truth = config.true_noise
    n = len(ok)
    out = {}
    for method in config.methods:
        Qs = [t.estimates[method].Q for t in ok]
        Rs = [t.estimates[method].R for t in ok]
        out[method] = MethodSummary(
            rmse_Q=math.sqrt(math.fsum(np.sum((q - truth.Q) ** 2) for q in Qs) / n),
            rmse_R=math.sqrt(math.fsum(np.sum((r - truth.R) ** 2) for r in Rs) / n),
            mean_Q=_fsum_mean(Qs),
            mean_R=_fsum_mean(Rs),
            rmse_state=math.sqrt(math.fsum(t.sse[method] for t in ok) / (n * config.eval_length)),
        )
    return McSummary(methods=out, trials=trials, n_failed=n_failed)


def _fsum_mean(mats) -> np.ndarray:
    stack = np.stack(mats)
    flat = stack.reshape(len(mats), -1)
    mean = np.array([math.fsum(flat[:, i]) / len(mats) for i in range(flat.shape[1])])
    return mean.reshape(stack.shape[1:])


MapFn = Callable[[Callable, Iterable], Iterable]


def run_monte_carlo(config: ExperimentConfig, map_fn: MapFn | None = None) -> McSummary:
    """Run ``n_trials`` independent trials and aggregate them.

    ``map_fn`` (e.g. ``executor.map``) lets the caller distribute trials;
    the summary does not depend on how they are scheduled.
    """
    map_fn = map_fn or map
    trials = list(map_fn(_TrialRunner(config), range(config.n_trials)))
    return summarize(config, trials)


class _TrialRunner:
    # picklable callable for process pools
    def __init__(self, config: ExperimentConfig):
        self.config = config

    def __call__(self, trial_index: int) -> TrialRecord:
        return run_trial(self.config, trial_index)


def sweep_epsilon(config: ExperimentConfig, eps_values=None, map_fn: MapFn | None = None):
    """Return ``[(epsilon, McSummary), ...]`` with the outlier magnitude held fixed."""
    eps_values = config.eps_values if eps_values is None else eps_values
    rows = []
    for eps in eps_values:
        cfg = replace(config, contamination=replace(config.contamination, epsilon=float(eps)))
        rows.append((float(eps), run_monte_carlo(cfg, map_fn)))
    return rows


def sweep_lag_window(config: ExperimentConfig, N_values=None, map_fn: MapFn | None = None):
    """Return ``[(N, McSummary), ...]``; batch length follows ``max(tau, 3N)``."""
    N_values = config.N_values if N_values is None else N_values
    rows = []
    for N in N_values:
        cfg = replace(config, estimator=replace(config.estimator, N=int(N)))
        rows.append((int(N), run_monte_carlo(cfg, map_fn)))
    return rows


@dataclass(frozen=True)
class BatchDiagnostics:
    raw_lag0: float
    clean_lag0: float
    n_flagged: int
    n_outliers: int
    true_positive_rate: float  # nan when the batch holds no outliers
    false_positive_rate: float


def warmup_diagnostics(config: ExperimentConfig, trial_index: int) -> list[BatchDiagnostics]:
    """Detector behaviour on each warm-up batch, filtered with the oracle gain."""
    m = config.model
    warm, _ = _simulate_trial(config, config.trial_seed(trial_index))
    K = steady_state_gain(m, config.true_noise).K
    run = run_predictor(m, K, warm.measurements)
    tau = config.estimator.tau_use
    N = config.estimator.N
    out = []
    for b in range(config.estimator.n_batches):
        sl = slice(b * tau, (b + 1) * tau)
        e = run.innovations[sl]
        truth = warm.outlier_flags[sl]
        det = detect_innovation_outliers(e, config.estimator.gamma_thr)
        flagged = np.zeros(len(e), dtype=bool)
        flagged[det.flagged] = True
        n_out = int(truth.sum())
        out.append(
            BatchDiagnostics(
                raw_lag0=float(empirical_autocov(e, N).b[0]),
                clean_lag0=float(empirical_autocov(e, N, det.flagged).b[0]),
                n_flagged=int(flagged.sum()),
                n_outliers=n_out,
                true_positive_rate=float((flagged & truth).sum() / n_out) if n_out else float("nan"),
                false_positive_rate=float((flagged & ~truth).sum() / max(int((~truth).sum()), 1)),
            )
        )
    return out
