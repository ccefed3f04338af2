import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pogvio.manifold import exp_so3, log_so3
from pogvio.propagation import (
    GRAVITY, ImuSample, NoiseParams, clock_transition, process_noise, propagate, propagate_covariance,
    propagate_mean, state_transition,
)
from pogvio.simulator import TrajectoryParams, specific_force, trajectory
from pogvio.state import CLASSICAL, CameraExtrinsic, ClockState, ImuState, WindowState, clone_camera


def perturb(imu, e):
    dR = exp_so3(e[0:3])
    return ImuState(dR @ imu.R, dR @ imu.p + e[3:6], dR @ imu.v + e[6:9], imu.bg + e[9:12], imu.ba + e[12:15])


def imu_err(a, b):
    th = log_so3(a.R @ b.R.T)
    dR = exp_so3(th)
    return np.concatenate([th, a.p - dR @ b.p, a.v - dR @ b.v, a.bg - b.bg, a.ba - b.ba])


def random_imu(rng):
    return ImuState(exp_so3(rng.normal(size=3)), rng.normal(size=3) * 5, rng.normal(size=3),
                    rng.normal(size=3) * 0.01, rng.normal(size=3) * 0.1)


def test_transition_matches_finite_differences(rng):
    h = 1e-6
    for _ in range(100):
        imu = random_imu(rng)
        s = ImuSample(0.0, rng.normal(size=3), rng.normal(size=3) * 3 - GRAVITY)
        dt = 0.01
        nxt = propagate_mean(imu, s, dt)
        Phi = state_transition(imu, nxt, s, dt)
        F = np.zeros((15, 15))
        for j in range(15):
            e = np.zeros(15)
            e[j] = h
            F[:, j] = (imu_err(propagate_mean(perturb(imu, e), s, dt), nxt)
                       - imu_err(propagate_mean(perturb(imu, -e), s, dt), nxt)) / (2 * h)
        assert np.max(np.abs(F - Phi)) <= 1e-4 * np.max(np.abs(Phi))


def test_transition_structure(rng):
    imu = random_imu(rng)
    s = ImuSample(0.0, rng.normal(size=3), rng.normal(size=3))
    dt = 0.01
    Phi = state_transition(imu, propagate_mean(imu, s, dt), s, dt)
    assert np.allclose(np.diag(Phi), 1.0)
    assert np.allclose(Phi[3:6, 6:9], dt * np.eye(3))
    G = np.array([[0, 9.81, 0], [-9.81, 0, 0], [0, 0, 0]])
    assert np.allclose(Phi[6:9, 0:3], dt * G)
    assert np.allclose(Phi[3:6, 0:3], 0.5 * dt * dt * G)
    # rotation error is untouched by position/velocity errors
    assert np.allclose(Phi[0:3, 3:9], 0.0)


def test_transition_tends_to_identity(rng):
    imu = random_imu(rng)
    s = ImuSample(0.0, rng.normal(size=3), rng.normal(size=3))
    dt = 1e-9
    assert np.allclose(state_transition(imu, propagate_mean(imu, s, dt), s, dt), np.eye(15), atol=1e-7)


def test_transition_composes(rng):
    imu = random_imu(rng)
    s1 = ImuSample(0.0, rng.normal(size=3), rng.normal(size=3))
    s2 = ImuSample(0.01, rng.normal(size=3), rng.normal(size=3))
    a = propagate_mean(imu, s1, 0.01)
    b = propagate_mean(a, s2, 0.01)
    P1 = state_transition(imu, a, s1, 0.01)
    P2 = state_transition(a, b, s2, 0.01)
    st = WindowState(imu, [], np.eye(15))
    _, acc = propagate(st, np.array([s1.omega, s2.omega]), np.array([s1.accel, s2.accel]), 0.01, NoiseParams())
    assert np.allclose(acc, P2 @ P1, rtol=1e-6, atol=1e-12)


def test_hover_is_stationary():
    imu = ImuState(np.eye(3), np.zeros(3), np.zeros(3))
    nxt = propagate_mean(imu, ImuSample(0.0, np.zeros(3), -GRAVITY), 0.01)
    assert np.allclose(nxt.p, 0.0, atol=1e-15) and np.allclose(nxt.v, 0.0, atol=1e-15)
    assert np.allclose(nxt.R, np.eye(3))


def test_nonpositive_dt_raises():
    imu = ImuState(np.eye(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        propagate_mean(imu, ImuSample(0.0, np.zeros(3), np.zeros(3)), 0.0)


def test_exact_imu_integrates_the_analytic_trajectory():
    params = TrajectoryParams()
    dt, n = 0.01, 1000
    R0, p0, v0, _, _ = trajectory(0.0, params)
    R, _, _, a, w = trajectory((np.arange(n) + 0.5) * dt, params)
    f = specific_force(R, a)
    imu = ImuState(R0, p0, v0)
    for k in range(n):
        imu = propagate_mean(imu, ImuSample(k * dt, w[k], f[k]), dt)
    R1, p1, _, _, _ = trajectory(n * dt, params)
    assert np.linalg.norm(imu.p - p1) < 1e-3
    assert np.linalg.norm(log_so3(R1 @ imu.R.T)) < 1e-9


def test_zero_noise_identity_transition_keeps_covariance(rng):
    A = rng.normal(size=(21, 21))
    st = clone_camera(WindowState(random_imu(rng), [], np.eye(15)), CameraExtrinsic(), 0)
    st.cov = A @ A.T
    out = propagate_covariance(st, np.eye(15), 0.01, NoiseParams(0, 0, 0, 0, 0))
    assert np.allclose(out.cov, st.cov)


def test_clone_blocks_static_and_cross_terms_follow_phi(rng):
    st = WindowState(random_imu(rng), [], np.eye(15) * 0.01)
    st = clone_camera(st, CameraExtrinsic(), 0)
    om = rng.normal(size=(10, 3)) * 0.1
    ac = rng.normal(size=(10, 3)) - GRAVITY
    out, Phi = propagate(st, om, ac, 0.01, NoiseParams())
    assert np.array_equal(out.cov[15:, 15:], st.cov[15:, 15:])
    assert np.allclose(out.cov[:15, 15:], Phi @ st.cov[:15, 15:])


def test_long_propagation_stays_symmetric_psd(rng):
    st = WindowState(random_imu(rng), [], np.eye(15) * 1e-4, ClockState())
    st.cov = np.eye(20) * 1e-4
    traces = []
    for _ in range(200):
        om = rng.normal(size=(100, 3)) * 0.3
        ac = rng.normal(size=(100, 3)) - GRAVITY
        st, _ = propagate(st, om, ac, 0.01, NoiseParams())
        traces.append(np.trace(st.cov))
    assert np.array_equal(st.cov, st.cov.T)
    assert np.min(np.linalg.eigvalsh(st.cov)) > -1e-10 * np.linalg.norm(st.cov)
    assert np.all(np.diff(traces) >= 0)


def test_process_noise_is_psd(rng):
    imu = random_imu(rng)
    s = ImuSample(0.0, rng.normal(size=3), rng.normal(size=3))
    Phi = state_transition(imu, propagate_mean(imu, s, 0.01), s, 0.01)
    Q = process_noise(Phi, 0.01, NoiseParams())
    assert np.allclose(Q, Q.T)
    assert np.min(np.linalg.eigvalsh(Q)) > -1e-20


def test_clock_transition_matches_stepwise():
    Phi1, Q1 = clock_transition(0.01, 1, 0.05)
    Pk = np.diag([4.0, 4.0, 4.0, 4.0, 0.01])
    P = Pk.copy()
    for _ in range(10):
        P = Phi1 @ P @ Phi1.T + Q1
    Phi, Q = clock_transition(0.01, 10, 0.05)
    assert np.allclose(Phi @ Pk @ Phi.T + Q, P)


def test_classical_transition_is_similarity_of_invariant(rng):
    imu = random_imu(rng)
    om = rng.normal(size=(10, 3)) * 0.2
    ac = rng.normal(size=(10, 3)) - GRAVITY
    inv = WindowState(imu.copy(), [], np.eye(15) * 1e-3)
    cls = WindowState(imu.copy(), [], np.eye(15) * 1e-3, convention=CLASSICAL)
    out_i, Phi_i = propagate(inv, om, ac, 0.01, NoiseParams())
    out_c, Phi_c = propagate(cls, om, ac, 0.01, NoiseParams())
    from pogvio.state import imu_classical_to_invariant
    T0 = imu_classical_to_invariant(imu)
    T1 = imu_classical_to_invariant(out_c.imu)
    assert np.allclose(T1 @ Phi_c, Phi_i @ T0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1e-2), st.floats(0.0, 1e-2), st.floats(0.0, 1e-3), st.floats(0.0, 1e-3))
def test_noise_params_accept_nonnegative(g, a, wg, wa):
    n = NoiseParams(g, a, wg, wa)
    assert n.scaled(2.0).sigma_g == 2.0 * g


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        NoiseParams(sigma_g=-1.0)
