"""Deterministic visual-inertial(-GNSS) simulation.

Ground truth is a closed-form circle with a vertical sinusoid and yaw tangent
to the path. A camera looks outward at landmarks scattered on a surrounding
cylinder. Every random draw comes from generators seeded by ``SimConfig.seed``
(sensor noise) and ``SimConfig.landmark_seed`` (the map).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gnss import CONSTELLATIONS, GnssEpochMeasurement, SatelliteEpoch
from .propagation import GRAVITY, NoiseParams
from .state import CameraExtrinsic

WAVELENGTHS = {"GPS": 0.19029367, "BDS": 0.19203949, "GAL": 0.19029367, "GLO": 0.18713637}

# camera optical axis along the IMU -y axis (outward on a counter-clockwise circle)
OUTWARD_CAMERA = CameraExtrinsic(
    R_IC=np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]]),
    p_IC=np.array([0.05, -0.02, 0.01]),
)


@dataclass
class TrajectoryParams:
    radius: float = 5.0
    period: float = 20.0
    height_amp: float = 1.0
    height_period: float = 7.0


@dataclass
class SimConfig:
    duration: float = 200.0
    imu_rate: int = 100
    cam_rate: int = 10
    gnss_rate: int = 0
    pixel_sigma: float = 1.0
    focal: float = 460.0
    noise: NoiseParams = field(default_factory=NoiseParams)
    n_landmarks: int = 300
    trajectory: TrajectoryParams = field(default_factory=TrajectoryParams)
    seed: int = 0
    landmark_seed: int = 12345
    landmark_radius: float = 10.0
    landmark_height: tuple = (-3.0, 3.0)
    fov_deg: float = 90.0
    max_range: float = 40.0
    n_satellites: int = 8
    sigma_P: float = 1.0
    sigma_D: float = 0.1
    # spread of the true initial biases and receiver clock
    init_sigma_bg: float = 1.5e-4
    init_sigma_ba: float = 5e-4
    init_sigma_clock_bias: float = 10.0
    init_sigma_clock_drift: float = 0.1

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.imu_rate % self.cam_rate:
            raise ValueError("imu_rate must be a multiple of cam_rate")
        if self.gnss_rate and self.cam_rate % self.gnss_rate:
            raise ValueError("cam_rate must be a multiple of gnss_rate")
        if abs(self.duration * self.cam_rate - round(self.duration * self.cam_rate)) > 1e-9:
            raise ValueError("duration must hold a whole number of camera periods")

    @property
    def dt(self) -> float:
        return 1.0 / self.imu_rate

    @property
    def n_imu(self) -> int:
        return int(round(self.duration * self.imu_rate))

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.cam_rate)) + 1

    @property
    def imu_per_frame(self) -> int:
        return self.imu_rate // self.cam_rate

    def noiseless(self) -> "SimConfig":
        return replace(self, pixel_sigma=0.0, noise=NoiseParams(0, 0, 0, 0, 0), sigma_P=1e-300,
                       sigma_D=1e-300, init_sigma_bg=0.0, init_sigma_ba=0.0,
                       init_sigma_clock_bias=0.0, init_sigma_clock_drift=0.0)


def _rotz(psi):
    c, s = np.cos(psi), np.sin(psi)
    R = np.zeros(np.shape(psi) + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    R[..., 2, 2] = 1.0
    return R


def trajectory(t, params: TrajectoryParams = TrajectoryParams()):
    """Closed-form truth at time(s) ``t``.

    Returns ``(R, p, v, a_world, omega_body)``; leading dimensions follow ``t``.
    """
    t = np.asarray(t, dtype=float)
    r = params.radius
    w = 2.0 * math.pi / params.period
    A = params.height_amp
    W = 2.0 * math.pi / params.height_period
    c, s = np.cos(w * t), np.sin(w * t)
    sh, ch = np.sin(W * t), np.cos(W * t)
    p = np.stack([r * c, r * s, A * sh], axis=-1)
    v = np.stack([-r * w * s, r * w * c, A * W * ch], axis=-1)
    a = np.stack([-r * w * w * c, -r * w * w * s, -A * W * W * sh], axis=-1)
    R = _rotz(w * t + 0.5 * math.pi)
    omega = np.zeros(t.shape + (3,))
    omega[..., 2] = w
    return R, p, v, a, omega


def specific_force(R, a_world):
    return np.einsum("...ji,...j->...i", R, a_world - GRAVITY)


def synth_imu(config: SimConfig, rng: np.random.Generator, noise: NoiseParams = None):
    """IMU stream of ``n_imu`` samples; sample ``k`` covers ``[k dt, (k+1) dt)``.

    Returns a dict with ``t``, ``omega``, ``accel`` (measured) and the true
    biases ``bg``, ``ba`` with one extra row (bias after the last sample).
    """
    noise = config.noise if noise is None else noise
    n, dt = config.n_imu, config.dt
    t = np.arange(n) * dt
    R, _, _, a, omega = trajectory(t + 0.5 * dt, config.trajectory)
    f = specific_force(R, a)

    bg = np.empty((n + 1, 3))
    ba = np.empty((n + 1, 3))
    bg[0] = rng.normal(0.0, config.init_sigma_bg, 3) if config.init_sigma_bg else 0.0
    ba[0] = rng.normal(0.0, config.init_sigma_ba, 3) if config.init_sigma_ba else 0.0
    bg[1:] = bg[0] + np.cumsum(noise.sigma_wg * math.sqrt(dt) * rng.standard_normal((n, 3)), axis=0)
    ba[1:] = ba[0] + np.cumsum(noise.sigma_wa * math.sqrt(dt) * rng.standard_normal((n, 3)), axis=0)
    n_g = noise.sigma_g / math.sqrt(dt) * rng.standard_normal((n, 3))
    n_a = noise.sigma_a / math.sqrt(dt) * rng.standard_normal((n, 3))
    return {
        "t": t,
        "omega": omega + bg[:-1] + n_g,
        "accel": f + ba[:-1] + n_a,
        "bg": bg,
        "ba": ba,
    }


def make_landmarks(config: SimConfig) -> np.ndarray:
    rng = np.random.default_rng(config.landmark_seed)
    phi = rng.uniform(0.0, 2.0 * math.pi, config.n_landmarks)
    z = rng.uniform(config.landmark_height[0], config.landmark_height[1], config.n_landmarks)
    rad = config.landmark_radius
    return np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=-1)


def camera_pose(R_GI, p_GI, extrinsic: CameraExtrinsic):
    return R_GI @ extrinsic.R_IC, p_GI + R_GI @ extrinsic.p_IC


def synth_camera(R_GI, p_GI, landmarks, extrinsic: CameraExtrinsic, pixel_sigma: float, focal: float,
                 rng: np.random.Generator, fov_deg: float = 90.0, max_range: float = 40.0):
    """Noisy normalized observations ``[(feature_id, xy), ...]`` of visible landmarks."""
    R_GC, p_GC = camera_pose(R_GI, p_GI, extrinsic)
    c = (landmarks - p_GC) @ R_GC
    lim = math.tan(math.radians(0.5 * fov_deg))
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = c[:, :2] / c[:, 2:3]
    visible = (
        (c[:, 2] > 0.1)
        & (np.abs(xy[:, 0]) <= lim)
        & (np.abs(xy[:, 1]) <= lim)
        & (np.linalg.norm(c, axis=1) <= max_range)
    )
    ids = np.flatnonzero(visible)
    noise = rng.standard_normal((len(ids), 2)) * (pixel_sigma / focal)
    obs = xy[ids] + noise
    return [(int(i), obs[k]) for k, i in enumerate(ids)]


def satellite_constellation(config: SimConfig):
    """Static satellites 2e7 m away, spread in azimuth, elevations >= 15 deg."""
    sats = []
    elev = (20.0, 55.0, 35.0, 75.0, 25.0, 45.0, 65.0, 15.0)
    for k in range(config.n_satellites):
        az = math.radians(360.0 * k / config.n_satellites + 10.0)
        el = math.radians(elev[k % len(elev)])
        pos = 2e7 * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        name = CONSTELLATIONS[k % len(CONSTELLATIONS)]
        sats.append(SatelliteEpoch(k, name, pos, np.zeros(3), 0.0, 0.0, WAVELENGTHS[name]))
    return sats


def synth_clock(config: SimConfig, rng: np.random.Generator, noise: NoiseParams = None):
    """True receiver clock per IMU step: ``bias += drift dt``, drift is a random walk."""
    noise = config.noise if noise is None else noise
    n, dt = config.n_imu, config.dt
    bias0 = rng.normal(0.0, 1.0, 4) * config.init_sigma_clock_bias
    drift0 = rng.normal() * config.init_sigma_clock_drift
    steps = noise.sigma_clock_rw * math.sqrt(dt) * rng.standard_normal(n)
    drift = np.empty(n + 1)
    drift[0] = drift0
    drift[1:] = drift0 + np.cumsum(steps)
    bias = bias0[None, :] + dt * np.concatenate([[0.0], np.cumsum(drift[:-1])])[:, None]
    return bias, drift


def synth_gnss(p_GI, v_GI, clock_bias, clock_drift, satellites, sigma_P, sigma_D,
               rng: np.random.Generator, lever_arm=np.zeros(3), R_GI=np.eye(3)):
    """One epoch of pseudorange and Doppler measurements."""
    out = []
    p_ant = p_GI + R_GI @ lever_arm
    for sat in satellites:
        diff = p_ant - sat.pos
        rho = float(np.linalg.norm(diff))
        los = diff / rho
        P = rho + clock_bias[sat.system] - sat.clock_bias + sigma_P * rng.standard_normal()
        D = (los @ (v_GI - sat.vel) + clock_drift - sat.clock_drift) / sat.wavelength
        D += sigma_D * rng.standard_normal()
        out.append(GnssEpochMeasurement(sat, float(P), float(D), sigma_P, sigma_D))
    return out


@dataclass
class SimData:
    config: SimConfig
    extrinsic: CameraExtrinsic
    imu: dict
    frame_times: np.ndarray
    frame_imu_index: np.ndarray
    truth_R: np.ndarray
    truth_p: np.ndarray
    truth_v: np.ndarray
    truth_bg: np.ndarray
    truth_ba: np.ndarray
    detections: list
    landmarks: np.ndarray
    gnss: dict
    clock_bias: np.ndarray = None
    clock_drift: np.ndarray = None
    satellites: list = None


def generate(config: SimConfig, extrinsic: CameraExtrinsic = OUTWARD_CAMERA) -> SimData:
    """Generate truth and all sensor streams for one run."""
    root = np.random.SeedSequence(config.seed)
    rng_imu, rng_cam, rng_gnss, rng_clock = (np.random.default_rng(s) for s in root.spawn(4))
    imu = synth_imu(config, rng_imu)
    landmarks = make_landmarks(config)
    k_per = config.imu_per_frame
    idx = np.arange(config.n_frames) * k_per
    times = idx * config.dt
    R, p, v, _, _ = trajectory(times, config.trajectory)
    detections = [
        synth_camera(R[j], p[j], landmarks, extrinsic, config.pixel_sigma, config.focal, rng_cam,
                     config.fov_deg, config.max_range)
        for j in range(config.n_frames)
    ]
    gnss, cb, cd, sats = {}, None, None, None
    if config.gnss_rate:
        cb, cd = synth_clock(config, rng_clock)
        sats = satellite_constellation(config)
        every = config.cam_rate // config.gnss_rate
        for j in range(0, config.n_frames, every):
            k = idx[j]
            gnss[j] = synth_gnss(p[j], v[j], cb[k], cd[k], sats, config.sigma_P, config.sigma_D, rng_gnss)
    return SimData(config, extrinsic, imu, times, idx, R, p, v, imu["bg"][idx], imu["ba"][idx],
                   detections, landmarks, gnss, cb, cd, sats)


def run_monte_carlo(config: SimConfig, filter_config, n_runs: int, base_seed: int = None,
                    n_jobs: int = 1):
    """Run ``n_runs`` independent simulations; run ``i`` uses seed ``base_seed + i``.

    Returns a list of :class:`~pogvio.consistency.MonteCarloRecord`; diverged
    runs are kept and flagged.
    """

    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    base = config.seed if base_seed is None else base_seed
    jobs = [(replace(config, seed=base + i), filter_config, i) for i in range(n_runs)]
    if n_jobs == 1:
        return [_one_run(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_one_run, jobs))


def _one_run(job):
    from .estimator import run_filter

    cfg, fcfg, run_id = job
    return run_filter(generate(cfg), fcfg, run_id=run_id)
