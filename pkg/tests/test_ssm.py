import numpy as np
import pytest

from conftest import scalar_model
from robust_als.ssm import (
    ContaminationSpec,
    NoiseCovariances,
    StateSpaceModel,
    simulate,
    validate_model,
)


def test_validate_benchmark(model):
    rep = validate_model(StateSpaceModel(F=np.diag([0.1, 0.2, 0.3]), Gw=np.eye(3), H=np.eye(3)))
    assert rep.spectral_radius == pytest.approx(0.3)
    assert rep.ok
    assert validate_model(model).ok


def test_validate_unit_root_reports_without_raising():
    rep = validate_model(scalar_model(1.0))
    assert rep.spectral_radius == 1.0
    assert not rep.stable
    assert rep.messages


def test_validate_nilpotent():
    rep = validate_model(StateSpaceModel(F=[[0, 2], [0, 0]], Gw=np.eye(2), H=[[1, 0]]))
    assert rep.spectral_radius == 0.0
    assert rep.ok


@pytest.mark.parametrize(
    "F,Gw,H",
    [
        ([[1, 0]], [[1]], [[1]]),
        (np.eye(2), [[1], [1], [1]], [[1, 0]]),
        (np.eye(2), [[1], [1]], [[1, 0, 0]]),
    ],
)
def test_dimension_mismatch_is_hard_error(F, Gw, H):
    with pytest.raises(ValueError):
        StateSpaceModel(F=F, Gw=Gw, H=H)


def test_noise_covariances_symmetry_enforced():
    with pytest.raises(ValueError):
        NoiseCovariances(Q=[[1, 0.5], [0, 1]], R=[[1]])
    assert not NoiseCovariances(Q=[[-1.0]], R=[[1.0]]).is_psd()


def test_contamination_bounds():
    with pytest.raises(ValueError):
        ContaminationSpec(epsilon=1.0)
    with pytest.raises(ValueError):
        ContaminationSpec(epsilon=-0.1)


def test_zero_noise_reproduces_recursion(model):
    x0 = np.ones(3)
    tr = simulate(model, NoiseCovariances.scalar(0.0, 0.0), None, x0, 20, seed=7)
    x = x0.copy()
    for k in range(20):
        np.testing.assert_array_equal(tr.states[k], x)
        np.testing.assert_array_equal(tr.measurements[k], model.H @ x)
        x = model.F @ x
    assert not tr.outlier_flags.any()


def test_determinism(model, truth):
    a = simulate(model, truth, ContaminationSpec(), np.zeros(3), 500, seed=99)
    b = simulate(model, truth, ContaminationSpec(), np.zeros(3), 500, seed=99)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.measurements, b.measurements)
    np.testing.assert_array_equal(a.outlier_flags, b.outlier_flags)
    c = simulate(model, truth, ContaminationSpec(), np.zeros(3), 500, seed=100)
    assert not np.array_equal(a.measurements, c.measurements)


def test_flags_mark_exactly_the_perturbed_steps(model, truth):
    dirty = simulate(model, truth, ContaminationSpec(0.2, 8.0), np.zeros(3), 2000, seed=3)
    clean = simulate(model, truth, ContaminationSpec(0.2, 0.0), np.zeros(3), 2000, seed=3)
    np.testing.assert_array_equal(dirty.outlier_flags, clean.outlier_flags)
    changed = np.any(dirty.measurements != clean.measurements, axis=1)
    np.testing.assert_array_equal(changed, dirty.outlier_flags)


def test_non_psd_noise_is_hard_error(model):
    with pytest.raises(ValueError):
        simulate(model, NoiseCovariances.scalar(-1.0, 3.0), None, np.zeros(3), 10, seed=0)


def test_semidefinite_noise_accepted():
    m = StateSpaceModel(F=np.eye(2) * 0.5, Gw=np.eye(2), H=[[1, 0]])
    tr = simulate(m, NoiseCovariances(Q=[[1, 1], [1, 1]], R=[[1]]), None, np.zeros(2), 50, seed=0)
    assert np.all(np.isfinite(tr.states))


def test_outlier_fraction_within_binomial_band(model, truth):
    tr = simulate(model, truth, ContaminationSpec(0.15, 8.0), np.zeros(3), 100_000, seed=11)
    # 3 sigma of Bernoulli(0.15) at T = 1e5
    assert 0.1466 <= tr.outlier_flags.mean() <= 0.1534


def test_one_step_innovation_variance(model, truth):
    # z_k - H F x_{k-1} = H Gw w_{k-1} + v_k, variance (H Gw)^2 Q + R = 4.25
    tr = simulate(model, truth, None, np.zeros(3), 100_000, seed=5)
    e = tr.measurements[1:, 0] - tr.states[:-1] @ (model.H @ model.F).ravel()
    assert abs(e.var() / 4.25 - 1.0) < 0.05


def test_measurement_noise_calibration(model, truth):
    tr = simulate(model, truth, ContaminationSpec(0.15, 8.0), np.zeros(3), 100_000, seed=6)
    resid = (tr.measurements - tr.states @ model.H.T)[~tr.outlier_flags]
    cov = np.atleast_2d(np.cov(resid.T))
    assert np.linalg.norm(cov - truth.R) / np.linalg.norm(truth.R) < 0.05
