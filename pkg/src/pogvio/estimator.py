"""Sliding-window filter loop tying propagation, cloning, feature updates and GNSS together."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .consistency import MonteCarloRecord, ObservabilityTrace, clone_sum_constraint, nullspace_basis
from .features import BASELINE, POSEONLY, TrackStore, select_marginalization
from .gnss import GNSS_GATE, gnss_update
from .landmark import MULTI_VIEW, TWO_VIEW
from .manifold import exp_so3, log_so3
from .propagation import NoiseParams, propagate
from .state import (
    CLASSICAL, CLOCK_DIM, IMU_DIM, INVARIANT, CameraExtrinsic, ClockState, ImuState, WindowState,
    apply_correction, clone_camera, clone_jacobian, imu_classical_to_invariant, marginalize_clone,
)
from .vision import VISION_GATE, msckf_blocks, poseonly_blocks, stacked_update

logger = logging.getLogger(__name__)

ALGORITHMS = ("poseonly-multi", "poseonly-two", "msckf-L5", "msckf-L10", "classical-ekf-jacobians")


@dataclass(frozen=True)
class Variant:
    track_mode: str
    depth_mode: str = MULTI_VIEW
    convention: str = INVARIANT
    track_length: int = 5


VARIANTS = {
    "poseonly-multi": Variant(POSEONLY),
    "poseonly-two": Variant(POSEONLY, TWO_VIEW),
    "msckf-L5": Variant(BASELINE, track_length=5),
    "msckf-L10": Variant(BASELINE, track_length=10),
    "classical-ekf-jacobians": Variant(POSEONLY, convention=CLASSICAL),
}


@dataclass
class FilterConfig:
    """Filter-side settings; the filter's noise model is independent of the simulator's."""

    algorithm: str = "poseonly-multi"
    window_size: int = 10
    noise: NoiseParams = field(default_factory=NoiseParams)
    pixel_sigma: float = 1.0
    focal: float = 460.0
    vision_gate: Optional[float] = VISION_GATE
    gnss_gate: Optional[float] = GNSS_GATE
    use_gnss: bool = True
    use_doppler: bool = True
    max_base_age: Optional[int] = None
    record_trace: bool = False
    exact_init: bool = False
    divergence_threshold: float = 100.0
    init_sigma_ori_deg: float = 0.5
    init_sigma_pos: float = 0.05
    init_sigma_vel: float = 0.05
    init_sigma_bg: float = 1.5e-4
    init_sigma_ba: float = 5e-4
    init_sigma_clock_bias: float = 10.0
    init_sigma_clock_drift: float = 0.1

    def __post_init__(self):
        if self.algorithm not in VARIANTS:
            raise ValueError(f"algorithm: unknown value {self.algorithm!r}, expected one of {ALGORITHMS}")
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        if not self.pixel_sigma > 0 or not self.focal > 0:
            raise ValueError("pixel_sigma and focal must be positive")

    @property
    def variant(self) -> Variant:
        return VARIANTS[self.algorithm]

    @property
    def pixel_var(self) -> float:
        return (self.pixel_sigma / self.focal) ** 2

    def initial_cov(self, with_clock: bool) -> np.ndarray:
        sig = np.concatenate([
            np.full(3, math.radians(self.init_sigma_ori_deg)),
            np.full(3, self.init_sigma_pos),
            np.full(3, self.init_sigma_vel),
            np.full(3, self.init_sigma_bg),
            np.full(3, self.init_sigma_ba),
        ])
        if with_clock:
            sig = np.concatenate([sig, np.full(4, self.init_sigma_clock_bias), [self.init_sigma_clock_drift]])
        return np.diag(sig**2)


class SlidingWindowFilter:
    """Camera-rate filter driver.

    Call :meth:`propagate` with the IMU samples since the last frame, then
    :meth:`process_frame` with that frame's detections (and GNSS epoch, if any).
    """

    def __init__(self, config: FilterConfig, extrinsic: CameraExtrinsic, state: WindowState):
        self.config = config
        self.extrinsic = extrinsic
        v = config.variant
        self.variant = v
        self.state = state
        self.store = TrackStore(v.track_mode, max_track_length=v.track_length)
        self.max_base_age = config.max_base_age or 2 * config.window_size
        self.last_omega = np.zeros(3)
        self.n_vision_updates = 0
        self.n_gnss_accepted = 0
        self.trace = None
        if config.record_trace:
            self.trace = ObservabilityTrace(nullspace_basis(state.imu, state.convention), state.convention)
            self._M_imu = np.eye(IMU_DIM)
            self._M_clone = {}

    def propagate(self, omegas, accels, dt: float) -> None:
        self.state, Phi = propagate(self.state, omegas, accels, dt, self.config.noise)
        self.last_omega = np.asarray(omegas[-1]) - self.state.imu.bg
        if self.trace is not None:
            self._M_imu = Phi @ self._M_imu

    # window management

    def _marginalize(self, frame_id: int) -> None:
        if self.store.mode == BASELINE:
            tracks = [t for t in self.store.tracks_observing(frame_id) if len(t.obs) >= 3]
            if tracks:
                self._vision_update(tracks, retire=True)
        self.state = marginalize_clone(self.state, frame_id)
        self.store.on_marginalize(frame_id)
        if self.trace is not None:
            self._M_clone.pop(frame_id, None)

    def _clone(self, frame_id: int) -> None:
        if self.trace is not None:
            J = clone_jacobian(self.state.imu, self.extrinsic, self.state.convention)
            self._M_clone[frame_id] = J @ self._M_imu
        self.state = clone_camera(self.state, self.extrinsic, frame_id)

    def _phi_from_start(self) -> np.ndarray:
        rows = [self._M_imu] + [self._M_clone[f] for f in self.state.frame_ids]
        if self.state.clock is not None:
            rows.append(np.zeros((CLOCK_DIM, IMU_DIM)))
        return np.vstack(rows)

    # updates

    def _vision_update(self, tracks, retire: bool) -> list:
        cfg = self.config
        if self.variant.track_mode == POSEONLY:
            blocks = poseonly_blocks(self.state, tracks, cfg.pixel_var, self.variant.depth_mode)
        else:
            blocks = msckf_blocks(self.state, tracks, cfg.pixel_var)
        prior = self.state
        self.state, used, H = stacked_update(self.state, blocks, cfg.pixel_var, cfg.vision_gate)
        if H is not None:
            self.n_vision_updates += 1
            if self.trace is not None:
                self.trace.t.append(self.frame_id)
                self.trace.H.append(H)
                self.trace.Phi.append(self._phi_from_start())
                if prior.convention == INVARIANT:
                    self.trace.constraint.append(
                        max(clone_sum_constraint(b[2], len(prior.clones)) for b in blocks))
        if retire:
            for t in tracks:
                self.store.retire(t.feature_id)
        else:
            # gated-out tracks also start over from their base observation
            self.store.prune_after_update([b[0] for b in blocks])
        return used

    def process_frame(self, frame_id: int, detections, gnss_epoch=None) -> None:
        self.frame_id = frame_id
        if len(self.state.clones) >= self.config.window_size:
            drop = select_marginalization(self.state.frame_ids, self.store, frame_id, self.max_base_age)
            self._marginalize(drop)
        self._clone(frame_id)
        self.store.ingest(frame_id, detections)

        lost = self.store.lost_tracks(frame_id)
        if self.store.mode == BASELINE:
            lost = [t for t in lost if len(t.obs) >= 3]
            if lost:
                self._vision_update(lost, retire=True)
            self.store.retire_lost(frame_id)
        else:
            self.store.retire_lost(frame_id)

        ready = self.store.ready_for_update()
        if ready:
            self._vision_update(ready, retire=self.store.mode == BASELINE)

        if gnss_epoch and self.config.use_gnss and self.state.clock is not None:
            self.state, n = gnss_update(self.state, gnss_epoch, omega=self.last_omega,
                                        use_doppler=self.config.use_doppler, gate=self.config.gnss_gate)
            self.n_gnss_accepted += n

    def pose_covariance(self) -> np.ndarray:
        """6x6 ``(theta, p)`` covariance of the IMU pose in right-invariant coordinates."""
        P = self.state.cov[:IMU_DIM, :IMU_DIM]
        if self.state.convention == CLASSICAL:
            T = imu_classical_to_invariant(self.state.imu)
            P = T @ P @ T.T
        return P[:6, :6]


def initial_state(sim, config: FilterConfig, rng: np.random.Generator) -> WindowState:
    """Truth at ``t0`` perturbed by a draw from the filter's initial covariance.

    Biases and clock start at zero; their true values were drawn from the
    simulator's own initial spread.
    """
    v = config.variant
    with_clock = bool(sim.gnss) and config.use_gnss
    truth = ImuState(sim.truth_R[0].copy(), sim.truth_p[0].copy(), sim.truth_v[0].copy(),
                     sim.truth_bg[0].copy(), sim.truth_ba[0].copy())
    P0 = config.initial_cov(with_clock)
    if config.exact_init:
        clock = ClockState(sim.clock_bias[0].copy(), float(sim.clock_drift[0])) if with_clock else None
        return WindowState(truth, [], P0, clock, config.window_size, v.convention)
    start = ImuState(truth.R, truth.p, truth.v)
    state = WindowState(start, [], P0, ClockState() if with_clock else None, config.window_size, v.convention)
    dx = np.zeros(state.dim)
    dx[:9] = rng.standard_normal(9) * np.sqrt(np.diag(P0)[:9])
    # a draw of the true-minus-estimate error; retract its negative
    out = apply_correction(state, -dx) if v.convention == CLASSICAL else _invariant_offset(state, dx)
    out.cov = P0
    return out


def _invariant_offset(state: WindowState, e: np.ndarray) -> WindowState:
    """Estimate whose right-invariant error with respect to the truth is ``e``."""
    out = state.copy()
    dR = exp_so3(e[0:3])
    imu = out.imu
    # R = exp(theta) R_hat,  x = exp(theta) x_hat + x_tilde
    imu.R = dR.T @ imu.R
    imu.p = dR.T @ (imu.p - e[3:6])
    imu.v = dR.T @ (imu.v - e[6:9])
    return out


def _imu_error(R, p, v, bg, ba, imu: ImuState) -> np.ndarray:
    th = log_so3(R @ imu.R.T)
    E = exp_so3(th)
    return np.concatenate([th, p - E @ imu.p, v - E @ imu.v, bg - imu.bg, ba - imu.ba])


def run_filter(sim, config: FilterConfig, run_id: int = 0, return_filter: bool = False):
    """Run the filter over one simulated data set and collect a :class:`MonteCarloRecord`.

    The run stops early, flagged as diverged, once the position error exceeds
    ``config.divergence_threshold`` or the state becomes non-finite.
    """
    scfg = sim.config
    rng = np.random.default_rng([scfg.seed, 7919])
    filt = SlidingWindowFilter(config, sim.extrinsic, initial_state(sim, config, rng))
    n = len(sim.frame_times)
    t_out = []
    R_est = np.empty((n, 3, 3))
    p_est = np.empty((n, 3))
    cov = np.empty((n, 6, 6))
    err = np.empty((n, 15))
    diverged = False
    imu = sim.imu
    dt = scfg.dt
    for j in range(n):
        if j:
            a, b = sim.frame_imu_index[j - 1], sim.frame_imu_index[j]
            filt.propagate(imu["omega"][a:b], imu["accel"][a:b], dt)
        filt.process_frame(j, sim.detections[j], sim.gnss.get(j))
        s = filt.state.imu
        e = _imu_error(sim.truth_R[j], sim.truth_p[j], sim.truth_v[j], sim.truth_bg[j], sim.truth_ba[j], s)
        t_out.append(sim.frame_times[j])
        R_est[j], p_est[j], err[j] = s.R, s.p, e
        cov[j] = filt.pose_covariance()
        if not np.all(np.isfinite(e)) or np.linalg.norm(e[3:6]) > config.divergence_threshold:
            logger.warning("run %d diverged at t=%.1f s", run_id, sim.frame_times[j])
            diverged = True
            break
    m = len(t_out)
    rec = MonteCarloRecord(run_id, np.array(t_out), sim.truth_R[:m].copy(), sim.truth_p[:m].copy(),
                           R_est[:m], p_est[:m], cov[:m], err[:m], config.algorithm, scfg.seed,
                           scfg.pixel_sigma, diverged)
    if return_filter:
        return rec, filt
    return rec
