import math
import random
from dataclasses import replace

import numpy as np
import pytest

from robust_als import experiments as ex
from robust_als.estimator import EstimatorConfig
from robust_als.experiments import ExperimentConfig, run_monte_carlo, run_trial, summarize
from robust_als.ssm import ContaminationSpec

FAST = ("oracle", "als", "als_irls")


def small(**kw):
    base = dict(n_trials=4, base_seed=11, methods=FAST, eval_length=100)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def mc4():
    return run_monte_carlo(small())


def test_defaults_match_table_of_parameters():
    c = ExperimentConfig()
    assert (c.n_trials, c.true_Q, c.true_R, c.eval_length) == (100, 5.0, 3.0, 500)
    assert (c.contamination.epsilon, c.contamination.omega) == (0.15, 8.0)
    e = c.estimator
    assert (e.N, e.tau, e.warmup_length, e.n_avg, e.gamma_thr) == (15, 150, 1500, 5, 3.5)


@pytest.mark.parametrize("kw", [dict(n_trials=0), dict(eval_length=0), dict(methods=("kalman",))])
def test_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        ExperimentConfig(**kw)


def test_single_trial_summary_equals_record():
    cfg = small(n_trials=1)
    s = run_monte_carlo(cfg)
    t = s.trials[0]
    for m in FAST:
        est = t.estimates[m]
        assert s[m].mean_Q == pytest.approx(est.Q, abs=0, rel=1e-15)
        assert s[m].rmse_Q == pytest.approx(abs(est.Q[0, 0] - 5.0), rel=1e-14, abs=1e-14)
        assert s[m].rmse_R == pytest.approx(abs(est.R[0, 0] - 3.0), rel=1e-14, abs=1e-14)
        assert s[m].rmse_state == pytest.approx(math.sqrt(t.sse[m] / cfg.eval_length), rel=1e-14)


def test_summary_fields_reproduced_from_records(mc4):
    for m in FAST:
        Q = np.array([t.estimates[m].Q[0, 0] for t in mc4.trials])
        assert mc4[m].mean_Q[0, 0] == pytest.approx(Q.mean(), rel=1e-12)
        assert mc4[m].rmse_Q == pytest.approx(np.sqrt(np.mean((Q - 5.0) ** 2)), rel=1e-12)
        assert mc4[m].rmse_Q >= 0 and mc4[m].rmse_state >= 0


def test_seed_reproducibility(mc4):
    again = run_monte_carlo(small())
    for a, b in zip(mc4.trials, again.trials):
        assert a.sse == b.sse
        for m in FAST:
            assert np.array_equal(a.estimates[m].Q, b.estimates[m].Q)


def test_aggregation_is_order_independent(mc4):
    cfg = small()
    shuffled = list(mc4.trials)
    random.Random(3).shuffle(shuffled)
    s = summarize(cfg, shuffled)
    for m in FAST:
        assert s[m].rmse_Q == mc4[m].rmse_Q
        assert s[m].rmse_state == mc4[m].rmse_state
        assert np.array_equal(s[m].mean_R, mc4[m].mean_R)


def test_trial_seeds_are_derived_from_base_seed(mc4):
    assert [t.seed for t in mc4.trials] == [11, 12, 13, 14]


def test_jackknife_changes_are_order_one_over_n():
    cfg = small(n_trials=8)
    full = run_monte_carlo(cfg)
    scale = max(abs(full["als_irls"].mean_Q[0, 0]), 1.0)
    for i in range(cfg.n_trials):
        loo = summarize(cfg, [t for j, t in enumerate(full.trials) if j != i])
        # one trial moves a mean by at most (max |x - mean|) / (n - 1)
        spread = max(abs(t.estimates["als_irls"].Q[0, 0] - full["als_irls"].mean_Q[0, 0]) for t in full.trials)
        assert abs(loo["als_irls"].mean_Q[0, 0] - full["als_irls"].mean_Q[0, 0]) <= spread / 7 + 1e-12 * scale


def test_evaluation_phase_is_clean():
    cfg = small()
    for i in range(3):
        warm, ev = ex._simulate_trial(cfg, cfg.trial_seed(i))
        assert not ev.outlier_flags.any()
        assert warm.outlier_flags.any()
        assert np.array_equal(ev.states[0], warm.states[-1])


def test_failures_are_recorded_and_excluded(monkeypatch):
    real = ex._run_trial

    def flaky(config, idx, seed):
        if idx == 3:
            raise FloatingPointError("boom")
        return real(config, idx, seed)

    monkeypatch.setattr(ex, "_run_trial", flaky)
    s = run_monte_carlo(small(n_trials=20, eval_length=20, methods=("oracle",)))
    assert s.n_failed == 1
    assert s.trials[3].failed and "boom" in s.trials[3].error


def test_too_many_failures_is_fatal(monkeypatch):
    def broken(config, idx, seed):
        if idx < 2:
            raise FloatingPointError("boom")
        return ex.TrialRecord(idx, seed, {"oracle": config.true_noise}, {"oracle": 0.0}, config.eval_length)

    monkeypatch.setattr(ex, "_run_trial", broken)
    with pytest.raises(RuntimeError, match="2 of 20"):
        run_monte_carlo(small(n_trials=20, methods=("oracle",)))


def test_lag_window_sweep_uses_max_rule():
    assert EstimatorConfig(N=40).tau_use == 150
    assert EstimatorConfig(N=60).tau_use == 180
    cfg = small(n_trials=1, methods=("oracle",), N_values=(10, 40))
    rows = ex.sweep_lag_window(cfg)
    assert [n for n, _ in rows] == [10, 40]


def test_epsilon_sweep_holds_omega_fixed(monkeypatch):
    seen = []
    monkeypatch.setattr(ex, "run_monte_carlo", lambda c, m=None: seen.append(c.contamination) or c)
    ex.sweep_epsilon(small(), [0.0, 0.3])
    assert seen == [ContaminationSpec(0.0, 8.0), ContaminationSpec(0.3, 8.0)]


def test_clean_data_als_and_irls_agree_on_average():
    cfg = small(n_trials=10, eval_length=10, contamination=ContaminationSpec(epsilon=0.0), methods=("als", "als_irls"))
    s = run_monte_carlo(cfg)
    a, r = s["als"], s["als_irls"]
    # single trials differ by up to ~0.5 because Huber trims noisy high lags
    assert abs(a.mean_Q[0, 0] - r.mean_Q[0, 0]) < 0.15 * 5.0
    assert abs(a.mean_R[0, 0] - r.mean_R[0, 0]) < 0.15 * 3.0
    assert 0.5 < a.rmse_Q / r.rmse_Q < 2


@pytest.mark.xfail(strict=True, reason="per-trial Q estimates have std ~2.4 on clean data; see ledger")
def test_clean_trial_both_within_15_percent_of_truth():
    t = run_trial(small(contamination=ContaminationSpec(epsilon=0.0), methods=("als", "als_irls")), 0)
    for m in ("als", "als_irls"):
        assert abs(t.estimates[m].Q[0, 0] / 5 - 1) < 0.15
        assert abs(t.estimates[m].R[0, 0] / 3 - 1) < 0.15


def test_contaminated_trial_als_is_biased_upward():
    t = run_trial(small(methods=("als", "als_irls")), 0)
    assert t.estimates["als"].R[0, 0] > 2 * t.estimates["als_irls"].R[0, 0]


def test_warmup_diagnostics_shapes():
    cfg = small()
    d = ex.warmup_diagnostics(cfg, 0)
    assert len(d) == cfg.estimator.n_batches
    for b in d:
        assert 0 <= b.false_positive_rate <= 1
        assert b.raw_lag0 >= b.clean_lag0 or b.n_flagged == 0


@pytest.mark.xfail(strict=True, reason="filtered-state RMSE of the optimal filter is sqrt(tr P) = 7.20 for this system")
def test_oracle_state_rmse_near_published_value():
    t = run_trial(replace(small(methods=("oracle",)), eval_length=500), 0)
    assert 1.6 < math.sqrt(t.sse["oracle"] / 500) < 2.0
