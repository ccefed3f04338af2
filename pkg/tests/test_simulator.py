import math

import numpy as np
import pytest

from pogvio.propagation import GRAVITY, NoiseParams
from pogvio.simulator import (
    OUTWARD_CAMERA, SimConfig, TrajectoryParams, camera_pose, generate, make_landmarks, satellite_constellation,
    specific_force, synth_camera, synth_clock, synth_gnss, synth_imu, trajectory,
)


def test_trajectory_start():
    prm = TrajectoryParams(radius=5.0, period=20.0)
    R, p, v, _, omega = trajectory(0.0, prm)
    assert np.allclose(p, [5.0, 0.0, 0.0])
    assert abs(v[:2] @ p[:2]) < 1e-12
    assert np.linalg.norm(v[:2]) == pytest.approx(2 * math.pi * 5.0 / 20.0)
    # body x axis points along the horizontal velocity
    assert np.allclose(R[:, 0], np.r_[v[:2], 0] / np.linalg.norm(v[:2]))
    assert np.allclose(omega, [0, 0, 2 * math.pi / 20.0])


def test_trajectory_kinematics_match_numeric_derivatives():
    prm = TrajectoryParams()
    t = np.linspace(0.0, 50.0, 1000)
    h = 1e-5
    R0, p0, v0, a0, w0 = trajectory(t, prm)
    Rp, pp, vp, _, _ = trajectory(t + h, prm)
    Rm, pm, vm, _, _ = trajectory(t - h, prm)
    assert np.allclose((pp - pm) / (2 * h), v0, rtol=1e-6, atol=1e-8)
    assert np.allclose((vp - vm) / (2 * h), a0, rtol=1e-6, atol=1e-8)
    dR = np.einsum("kji,kjl->kil", R0, (Rp - Rm) / (2 * h))
    assert np.allclose(dR[:, 1, 0], w0[:, 2], rtol=1e-6)
    assert np.allclose(dR[:, 0, 1], -w0[:, 2], rtol=1e-6)


def test_flat_circle_specific_force():
    prm = TrajectoryParams(radius=4.0, period=12.0, height_amp=0.0)
    R, _, v, a, _ = trajectory(3.3, prm)
    f = specific_force(R, a)
    speed = np.linalg.norm(v)
    assert np.linalg.norm(a) == pytest.approx(speed**2 / 4.0)
    assert np.allclose(R @ f, a - GRAVITY)


def small_config(**kw):
    return SimConfig(duration=kw.pop("duration", 5.0), **kw)


def test_noiseless_imu_is_truth():
    cfg = small_config().noiseless()
    imu = synth_imu(cfg, np.random.default_rng(0))
    R, _, _, a, omega = trajectory(imu["t"] + 0.5 * cfg.dt, cfg.trajectory)
    assert np.array_equal(imu["omega"], omega)
    assert np.array_equal(imu["accel"], specific_force(R, a))
    assert not imu["bg"].any() and not imu["ba"].any()


def test_gyro_white_noise_level():
    noise = NoiseParams(3e-4, 0.0, 0.0, 0.0)
    cfg = SimConfig(duration=1000.0, noise=noise, init_sigma_bg=0.0, init_sigma_ba=0.0)
    imu = synth_imu(cfg, np.random.default_rng(5))
    R, _, _, _, omega = trajectory(imu["t"] + 0.5 * cfg.dt, cfg.trajectory)
    err = imu["omega"] - omega
    assert err.std() == pytest.approx(3e-4 * math.sqrt(100), rel=0.03)


def test_streams_are_deterministic():
    cfg = small_config(gnss_rate=1, seed=11)
    a, b = generate(cfg), generate(cfg)
    assert np.array_equal(a.imu["accel"], b.imu["accel"])
    for da, db in zip(a.detections, b.detections):
        assert [i for i, _ in da] == [i for i, _ in db]
        assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(da, db))
    assert [m.pseudorange for m in a.gnss[10]] == [m.pseudorange for m in b.gnss[10]]
    c = generate(small_config(gnss_rate=1, seed=12))
    assert not np.array_equal(a.imu["accel"], c.imu["accel"])


def test_noise_free_detections_reproject():
    cfg = small_config()
    lm = make_landmarks(cfg)
    R, p, *_ = trajectory(1.0, cfg.trajectory)
    dets = synth_camera(R, p, lm, OUTWARD_CAMERA, 0.0, cfg.focal, np.random.default_rng(0))
    R_c, p_c = camera_pose(R, p, OUTWARD_CAMERA)
    assert dets
    for i, xy in dets:
        c = R_c.T @ (lm[i] - p_c)
        assert c[2] > 0
        assert np.allclose(xy, c[:2] / c[2], atol=1e-15)


def test_points_behind_camera_not_emitted():
    R_c, p_c = camera_pose(np.eye(3), np.zeros(3), OUTWARD_CAMERA)
    ahead = p_c + R_c @ np.array([0.0, 0.0, 5.0])
    behind = p_c - R_c @ np.array([0.0, 0.0, 5.0])
    dets = synth_camera(np.eye(3), np.zeros(3), np.stack([ahead, behind]), OUTWARD_CAMERA, 0.0, 460.0,
                        np.random.default_rng(0))
    assert [i for i, _ in dets] == [0]


def test_enough_detections_per_frame():
    sim = generate(SimConfig(duration=20.0))
    assert np.mean([len(d) for d in sim.detections]) > 20


def test_landmarks_on_cylinder():
    lm = make_landmarks(SimConfig())
    assert lm.shape == (300, 3)
    assert np.allclose(np.linalg.norm(lm[:, :2], axis=1), 10.0)
    assert lm[:, 2].min() >= -3 and lm[:, 2].max() <= 3


def test_noise_free_pseudorange_is_geometric_range():
    sats = satellite_constellation(SimConfig())
    p = np.array([1.0, 2.0, 3.0])
    out = synth_gnss(p, np.zeros(3), np.zeros(4), 0.0, sats, 1e-300, 1e-300, np.random.default_rng(0))
    for m in out:
        assert m.pseudorange == np.linalg.norm(m.sat.pos - p)
        assert abs(m.doppler) < 1e-290


def test_clock_drift_variance_grows_linearly():
    noise = NoiseParams(sigma_clock_rw=0.05)
    cfg = SimConfig(duration=10.0, noise=noise, init_sigma_clock_drift=0.0, init_sigma_clock_bias=0.0)
    drifts = np.stack([synth_clock(cfg, np.random.default_rng(s))[1] for s in range(2000)])
    for k in (250, 500, 1000):
        t = k * cfg.dt
        assert drifts[:, k].var() == pytest.approx(0.05**2 * t, rel=0.08)
    # 5% on the ratio of variances at t and 2t, pooled over the whole path
    ratio = drifts[:, 1000].var() / drifts[:, 500].var()
    assert ratio == pytest.approx(2.0, rel=0.1)


def test_clock_bias_integrates_drift():
    cfg = SimConfig(duration=2.0)
    bias, drift = synth_clock(cfg, np.random.default_rng(1))
    assert np.allclose(np.diff(bias, axis=0), cfg.dt * drift[:-1, None])


def test_frame_bookkeeping():
    cfg = SimConfig(duration=3.0, gnss_rate=2)
    sim = generate(cfg)
    assert cfg.n_frames == 31 and len(sim.detections) == 31
    assert np.allclose(sim.frame_times, np.arange(31) * 0.1)
    assert sorted(sim.gnss) == list(range(0, 31, 5))
    R, p, *_ = trajectory(sim.frame_times, cfg.trajectory)
    assert np.allclose(sim.truth_p, p)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(duration=0.0)
    with pytest.raises(ValueError):
        SimConfig(imu_rate=100, cam_rate=7)
    with pytest.raises(ValueError):
        SimConfig(cam_rate=10, gnss_rate=3)
