import numpy as np
import pytest

from pogvio.consistency import observability_nullspace_residual, rmse
from pogvio.estimator import ALGORITHMS, FilterConfig, SlidingWindowFilter, initial_state, run_filter
from pogvio.simulator import SimConfig, generate, run_monte_carlo
from pogvio.state import CLASSICAL


@pytest.fixture(scope="module")
def short_sim():
    return generate(SimConfig(duration=20.0, seed=3))


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_every_variant_tracks_a_short_run(short_sim, algorithm):
    rec = run_filter(short_sim, FilterConfig(algorithm=algorithm))
    assert not rec.diverged and len(rec) == len(short_sim.frame_times)
    ori, pos = rmse([rec])
    assert ori < 3.0 and pos < 0.5
    assert np.all(np.linalg.eigvalsh(rec.pose_cov) > 0)


def test_window_never_exceeds_size(short_sim):
    _, filt = run_filter(short_sim, FilterConfig(window_size=6), return_filter=True)
    assert len(filt.state.clones) == 6
    assert filt.state.dim == 15 + 36
    assert filt.n_vision_updates > 100
    filt.state.check()


def test_noise_free_exact_init_stays_on_truth():
    sim = generate(SimConfig(duration=20.0).noiseless())
    for alg in ("poseonly-multi", "msckf-L5"):
        rec = run_filter(sim, FilterConfig(algorithm=alg, exact_init=True))
        assert rmse([rec])[1] < 1e-3


def test_initial_state_draw(short_sim):
    cfg = FilterConfig()
    s = initial_state(short_sim, cfg, np.random.default_rng(0))
    assert not np.allclose(s.imu.p, short_sim.truth_p[0])
    assert np.linalg.norm(s.imu.p - short_sim.truth_p[0]) < 0.5
    assert s.clock is None and s.dim == 15
    exact = initial_state(short_sim, FilterConfig(exact_init=True), np.random.default_rng(0))
    assert np.array_equal(exact.imu.p, short_sim.truth_p[0])
    classical = initial_state(short_sim, FilterConfig(algorithm="classical-ekf-jacobians"),
                              np.random.default_rng(0))
    assert classical.convention == CLASSICAL


def test_trace_records_every_update(short_sim):
    _, filt = run_filter(short_sim, FilterConfig(record_trace=True), return_filter=True)
    assert len(filt.trace) == filt.n_vision_updates
    res = observability_nullspace_residual(filt.trace)
    assert res.max() < 1e-8
    assert max(filt.trace.constraint) < 1e-8


def test_gnss_updates_run_and_clock_is_estimated():
    sim = generate(SimConfig(duration=20.0, gnss_rate=1, seed=4))
    rec, filt = run_filter(sim, FilterConfig(), return_filter=True)
    assert filt.state.clock is not None
    assert filt.n_gnss_accepted > 0
    err = sim.clock_bias[sim.frame_imu_index[-1]] - filt.state.clock.bias
    assert np.abs(err).max() < 5.0
    off = run_filter(sim, FilterConfig(use_gnss=False))
    assert rec.pose_cov[-1][2, 2] < off.pose_cov[-1][2, 2]


def test_monte_carlo_is_reproducible():
    cfg = SimConfig(duration=5.0)
    a = run_monte_carlo(cfg, FilterConfig(), 2, base_seed=9)
    b = run_monte_carlo(cfg, FilterConfig(), 2, base_seed=9)
    assert [r.seed for r in a] == [9, 10]
    for x, y in zip(a, b):
        assert np.array_equal(x.p_est, y.p_est) and np.array_equal(x.pose_cov, y.pose_cov)
    assert not np.array_equal(a[0].p_est, a[1].p_est)


def test_filter_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(algorithm="ekf")
    assert FilterConfig(pixel_sigma=2.0, focal=400.0).pixel_var == pytest.approx((2.0 / 400.0) ** 2)


def test_divergence_flag(short_sim):
    rec = run_filter(short_sim, FilterConfig(divergence_threshold=1e-6))
    assert rec.diverged and len(rec) < len(short_sim.frame_times)


def test_filter_driver_accepts_manual_frames(short_sim):
    cfg = FilterConfig()
    filt = SlidingWindowFilter(cfg, short_sim.extrinsic, initial_state(short_sim, cfg, np.random.default_rng(1)))
    imu = short_sim.imu
    for j in range(5):
        if j:
            a, b = short_sim.frame_imu_index[j - 1], short_sim.frame_imu_index[j]
            filt.propagate(imu["omega"][a:b], imu["accel"][a:b], short_sim.config.dt)
        filt.process_frame(j, short_sim.detections[j])
    assert filt.state.frame_ids == [0, 1, 2, 3, 4]
    assert filt.n_vision_updates >= 1
