import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scalar_model
from robust_als.als import (
    build_design_matrix,
    empirical_autocov,
    ols_solve,
    pack_theta,
    project_psd,
    theoretical_autocov,
    unpack_theta,
)
from robust_als.kalman import steady_state_gain
from robust_als.oracle import random_psd, random_stable_system
from robust_als.ssm import NoiseCovariances, simulate


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_design_scalar_no_dynamics():
    d = build_design_matrix(scalar_model(0.0), [[0.7]], 1)
    np.testing.assert_allclose(d.A, [[1.0, 1.0]])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_design_scalar_half():
    d = build_design_matrix(scalar_model(0.5), [[0.0]], 1)
    np.testing.assert_allclose(d.A, [[4.0 / 3.0, 1.0]])


def test_design_shape_and_fingerprint(model, truth):
    K = steady_state_gain(model, truth).K
    d = build_design_matrix(model, K, 15)
    assert d.A.shape == (15, 2)
    assert d.model_fingerprint == build_design_matrix(model, K, 15).model_fingerprint
    assert d.model_fingerprint != build_design_matrix(model, K * 0.9, 15).model_fingerprint


def test_design_unstable_closed_loop_is_hard_error():
    with pytest.raises(ValueError):
        build_design_matrix(scalar_model(1.2), [[0.0]], 3)


def test_design_underdetermined_warns():
    with pytest.warns(RuntimeWarning):
        d = build_design_matrix(scalar_model(0.5), [[0.1]], 1)
    assert d.underdetermined


def test_benchmark_oracle_identity(model, truth):
    K = steady_state_gain(model, truth).K
    b = theoretical_autocov(model, K, truth, 15)
    A = build_design_matrix(model, K, 15).A
    assert np.linalg.norm(A @ [5.0, 3.0] - b) / np.linalg.norm(b) < 1e-10


def test_theoretical_scalar_cases():
    b = theoretical_autocov(scalar_model(0.0), [[0.5]], NoiseCovariances.scalar(1.0, 1.0), 2)
    np.testing.assert_allclose(b, [2.0, 0.0], atol=1e-15)
    b = theoretical_autocov(scalar_model(0.5), [[0.0]], NoiseCovariances.scalar(0.0, 1.0), 2)
    np.testing.assert_allclose(b, [1.0, 0.0], atol=1e-15)


def test_theoretical_benchmark_lag0(model, truth):
    K = steady_state_gain(model, truth).K
    assert theoretical_autocov(model, K, truth, 1)[0] == pytest.approx(4.3, abs=0.05)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_x=st.integers(1, 4), n_z=st.integers(1, 2), N=st.integers(1, 12))
def test_oracle_identity_random_systems(seed, n_x, n_z, N):
    rng = np.random.default_rng(seed)
    n_w = int(rng.integers(1, n_x + 1))
    m = random_stable_system(rng, n_x, n_z, n_w)
    K = steady_state_gain(m, NoiseCovariances(Q=random_psd(rng, n_w), R=random_psd(rng, n_z) + 0.1 * np.eye(n_z))).K
    truth = NoiseCovariances(Q=random_psd(rng, n_w), R=random_psd(rng, n_z))
    b = theoretical_autocov(m, K, truth, N)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        A = build_design_matrix(m, K, N).A
    assert np.linalg.norm(A @ pack_theta(truth) - b) / np.linalg.norm(b) < 1e-10


def test_empirical_alternating():
    ac = empirical_autocov([1, -1, 1, -1], 2)
    np.testing.assert_allclose(ac.b, [1.0, -1.0])
    assert ac.pair_counts.tolist() == [4, 3]


def test_empirical_flag_excluded():
    # 0-based index 2 is the 100
    ac = empirical_autocov([1, -1, 100, -1], 1, flagged=[2])
    assert ac.b[0] == pytest.approx(1.0)
    assert ac.pair_counts.tolist() == [3]
    assert ac.flagged_indices.tolist() == [2]


def test_empirical_either_endpoint_rule():
    e = [1.0, 2.0, 3.0, 4.0, 5.0]
    ac = empirical_autocov(e, 2, flagged=[2])
    # lag 1 pairs (0,1), (3,4) survive
    assert ac.pair_counts.tolist() == [4, 2]
    assert ac.b[1] == pytest.approx((2 * 1 + 5 * 4) / 2)


def test_empirical_all_pairs_flagged_is_hard_error():
    with pytest.raises(ValueError, match="lag 1"):
        empirical_autocov([1.0, 2.0, 3.0, 4.0], 2, flagged=[1, 3])


def test_empirical_pair_count_bounds(rng):
    e = rng.standard_normal(100)
    flagged = rng.choice(100, 10, replace=False)
    ac = empirical_autocov(e, 10, flagged)
    assert all(1 <= c <= 100 - j for j, c in enumerate(ac.pair_counts))
    assert empirical_autocov(e, 10).pair_counts.tolist() == [100 - j for j in range(10)]


def test_empirical_multichannel_layout(rng):
    e = rng.standard_normal((50, 2))
    ac = empirical_autocov(e, 3)
    C1 = e[1:].T @ e[:-1] / 49
    np.testing.assert_allclose(ac.lag(1, 2), C1)


def test_empirical_lag0_consistency(model, truth):
    K = steady_state_gain(model, truth).K
    tr = simulate(model, truth, None, np.zeros(3), 100_000, seed=8)
    from robust_als.kalman import run_predictor

    e = run_predictor(model, K, tr.measurements).innovations
    b_hat = empirical_autocov(e, 15).b
    b = theoretical_autocov(model, K, truth, 15)
    assert abs(b_hat[0] / b[0] - 1) < 0.05


def test_ols_min_norm_underdetermined():
    np.testing.assert_allclose(ols_solve(np.array([[1.0, 1.0]]), [8.0]), [4.0, 4.0])


def test_ols_identity():
    np.testing.assert_allclose(ols_solve(np.eye(2), [5.0, 3.0]), [5.0, 3.0])


def test_ols_rank_deficient_is_hard_error():
    with pytest.raises(np.linalg.LinAlgError, match="rank 1"):
        ols_solve(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]), [1.0, 2.0, 3.0])


def test_ols_exact_recovery_benchmark(model, truth):
    K = steady_state_gain(model, truth).K
    design = build_design_matrix(model, K, 15)
    theta = ols_solve(design, theoretical_autocov(model, K, truth, 15))
    np.testing.assert_allclose(theta, [5.0, 3.0], rtol=1e-8)


def test_unpack_scalar_and_symmetrize():
    c = unpack_theta([5.0, 3.0], 1, 1)
    assert c.Q[0, 0] == 5.0 and c.R[0, 0] == 3.0
    c = unpack_theta([1.0, 0.0, 2.0, 1.0], 2, 0)
    np.testing.assert_allclose(c.Q, [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        unpack_theta([1.0, 2.0, 3.0], 1, 1)


def test_pack_unpack_round_trip(rng):
    Q, R = random_psd(rng, 3), random_psd(rng, 2)
    c = unpack_theta(pack_theta(NoiseCovariances(Q=Q, R=R)), 3, 2)
    np.testing.assert_allclose(c.Q, Q, rtol=1e-15)
    np.testing.assert_allclose(c.R, R, rtol=1e-15)


def test_project_scalar_negative():
    assert project_psd(NoiseCovariances.scalar(-0.5, 1.0)).Q[0, 0] == 0.0


def test_project_clips_negative_eigenvalue():
    V = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    Q = V @ np.diag([2.0, -1.0]) @ V.T
    out = project_psd(NoiseCovariances(Q=Q, R=[[1.0]]))
    np.testing.assert_allclose(out.Q, V @ np.diag([2.0, 0.0]) @ V.T, atol=1e-14)


def test_project_fixes_psd_input(rng):
    Q = random_psd(rng, 3)
    np.testing.assert_allclose(project_psd(NoiseCovariances(Q=Q, R=[[2.0]])).Q, Q, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4))
def test_project_idempotent_and_shrinks_spectrum(seed, n):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    M = M + M.T
    c = NoiseCovariances(Q=M, R=M)
    once = project_psd(c)
    twice = project_psd(once)
    np.testing.assert_allclose(twice.Q, once.Q, atol=1e-12)
    before = np.linalg.eigvalsh(M)
    after = np.linalg.eigvalsh(once.Q)
    assert np.all(after >= -1e-12)
    assert np.all(after <= np.maximum(before, 0.0) + 1e-12)
