import math

import numpy as np
import pytest

from pogvio.consistency import (
    MonteCarloRecord, ObservabilityTrace, clone_sum_constraint, epoch_nees, nees, nees_details,
    nullspace_basis, observability_nullspace_residual, read_summary, rmse, summarize, write_summary,
)
from pogvio.manifold import exp_so3
from pogvio.propagation import ImuSample, propagate_mean, state_transition
from pogvio.state import CLASSICAL, ImuState

from conftest import random_rotation


def record(R_true, p_true, R_est, p_est, cov=None, run_id=0, diverged=False):
    E = len(R_true)
    cov = np.tile(np.eye(6), (E, 1, 1)) if cov is None else cov
    return MonteCarloRecord(run_id, np.arange(E, dtype=float), np.asarray(R_true), np.asarray(p_true),
                            np.asarray(R_est), np.asarray(p_est), cov, np.zeros((E, 15)), diverged=diverged)


def test_rmse_zero_for_perfect_estimate(rng):
    R = np.stack([random_rotation(rng) for _ in range(5)])
    p = rng.normal(size=(5, 3))
    assert rmse([record(R, p, R, p)]) == (0.0, 0.0)


def test_rmse_one_degree_yaw():
    R_true = exp_so3([0, 0, math.radians(1.0)])[None]
    ori, pos = rmse([record(R_true, np.zeros((1, 3)), np.eye(3)[None], np.zeros((1, 3)))])
    assert ori == pytest.approx(1.0)
    assert pos == pytest.approx(0.0)


def test_rmse_hand_built():
    I = np.tile(np.eye(3), (3, 1, 1))
    p_true = np.zeros((3, 3))
    p_est = np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, 2.0]])
    _, pos = rmse([record(I, p_true, I, p_est)])
    assert pos == pytest.approx(math.sqrt((1 + 4 + 4) / 3))
    # mean over runs of per-run RMS
    _, pos2 = rmse([record(I, p_true, I, p_est), record(I, p_true, I, p_true)])
    assert pos2 == pytest.approx(0.5 * math.sqrt(3))


def test_nees_trivial_cases():
    assert epoch_nees(np.zeros(6), np.eye(6))[0] == 0.0
    assert epoch_nees(np.eye(6)[0], np.eye(6))[0] == 1.0
    assert np.isnan(epoch_nees(np.ones(6), np.zeros((6, 6)))[0])


def test_nees_of_consistent_samples_is_dimension(rng):
    A = rng.normal(size=(6, 6))
    P = A @ A.T + 0.1 * np.eye(6)
    e = rng.multivariate_normal(np.zeros(6), P, size=100_000)
    val = epoch_nees(e, np.broadcast_to(P, (len(e), 6, 6))).mean()
    assert val == pytest.approx(6.0, rel=0.02)


def test_nees_pools_epochs_and_runs(rng):
    I = np.tile(np.eye(3), (2, 1, 1))
    z = np.zeros((2, 3))
    a = record(I, z, I, np.array([[1.0, 0, 0], [0, 0, 0]]))
    b = record(I[:1], z[:1], I[:1], np.array([[2.0, 0, 0]]))
    # epochs: 1, 0 and 4; pooled mean 5/3, run mean (0.5 + 4) / 2
    d = nees_details([a, b])
    assert d["pooled"] == pytest.approx(5 / 3)
    assert d["run_mean"] == pytest.approx(2.25)
    assert nees([a, b]) == d["pooled"]


def test_pose_errors_are_right_invariant(rng):
    R = random_rotation(rng)
    p = rng.normal(size=3)
    th = rng.normal(size=3) * 0.1
    dp = rng.normal(size=3)
    R_true = exp_so3(th) @ R
    p_true = exp_so3(th) @ p + dp
    e = record(R_true[None], p_true[None], R[None], p[None]).pose_errors()[0]
    assert np.allclose(e, np.r_[th, dp])


def test_summary_excludes_diverged_and_round_trips(tmp_path, rng):
    I = np.tile(np.eye(3), (2, 1, 1))
    z = np.zeros((2, 3))
    good = record(I, z, I, z + 0.1)
    bad = record(I, z, I, z + 100.0, diverged=True)
    row = summarize([good, bad], "poseonly-multi", 1.0)
    assert row["n_diverged"] == 1
    assert row["rmse_pos_m"] == pytest.approx(math.sqrt(0.03))
    path = tmp_path / "summary.csv"
    write_summary(path, [row])
    back = read_summary(path)[0]
    assert back["rmse_pos_m"] == row["rmse_pos_m"] and back["nees_pose"] == row["nees_pose"]
    assert back["algorithm"] == "poseonly-multi" and back["n_diverged"] == 1


def test_nullspace_basis_shapes_and_classical_dependence(rng):
    N = nullspace_basis()
    assert N.shape == (15, 4)
    assert np.allclose(N[0:3, 0], [0, 0, 1])
    assert np.allclose(N[3:6, 1:], np.eye(3))
    imu = ImuState(random_rotation(rng), rng.normal(size=3), rng.normal(size=3))
    Nc = nullspace_basis(imu, CLASSICAL)
    assert not np.allclose(Nc, N)
    with pytest.raises(ValueError):
        nullspace_basis(None, CLASSICAL)


def test_accumulated_transition_pose_block(rng):
    # pose rows and columns of the transition from t0 keep the form [[I, 0], [g dt^2 / 2, I]]
    imu = ImuState(random_rotation(rng), rng.normal(size=3), rng.normal(size=3))
    Phi = np.eye(15)
    dt, T = 0.01, 0.0
    for _ in range(50):
        s = ImuSample(T, rng.normal(size=3), rng.normal(size=3))
        nxt = propagate_mean(imu, s, dt)
        Phi = state_transition(imu, nxt, s, dt) @ Phi
        imu, T = nxt, T + dt
    G = np.array([[0, 9.81, 0], [-9.81, 0, 0], [0, 0, 0]])
    assert np.allclose(Phi[0:3, 0:3], np.eye(3))
    assert np.allclose(Phi[0:3, 3:6], 0.0)
    assert np.allclose(Phi[3:6, 0:3], 0.5 * G * T * T, atol=1e-9)
    assert np.allclose(Phi[3:6, 3:6], np.eye(3))
    # and the four expected directions are carried through unchanged
    N = nullspace_basis()
    assert np.allclose(Phi @ N, N, atol=1e-9)


def test_residual_zero_for_rows_orthogonal_to_basis(rng):
    N = nullspace_basis()
    Q = np.linalg.qr(np.hstack([N, rng.normal(size=(15, 11))]))[0]
    H = rng.normal(size=(5, 11)) @ Q[:, 4:].T
    trace = ObservabilityTrace(N, "invariant", [0, 1], [H, H + 0.1 * rng.normal(size=H.shape)],
                               [np.eye(15), np.eye(15)])
    res = observability_nullspace_residual(trace)
    assert res[0] < 1e-14 and res[1] > 1e-3


def test_clone_sum_constraint():
    H = np.zeros((2, 15 + 12))
    H[:, 15:21] = 1.0
    H[:, 21:27] = -1.0
    assert clone_sum_constraint(H, 2) == 0.0
    H[0, 15] = 2.0
    assert clone_sum_constraint(H, 2) > 0.1


def test_rejects_empty():
    with pytest.raises(ValueError):
        rmse([])
