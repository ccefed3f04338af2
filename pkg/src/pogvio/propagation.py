"""IMU mean propagation and right-invariant covariance propagation.

One IMU sample covers ``[t, t + dt)`` and carries the angular rate and
specific force at the middle of that interval. The integrator rotates with the
full increment and applies the specific force at the midpoint attitude::

    R' = R exp(w dt)
    f  = R exp(w dt / 2) a + g
    v' = v + f dt
    p' = p + v dt + f dt^2 / 2

with ``w = omega - b_g`` and ``a = accel - b_a``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifold import _skew_rows, exp_so3, exp_so3_batch, orthonormalize, right_jacobian_batch, skew
from .state import (
    BA, BG, CLASSICAL, IMU_DIM, POS, THETA, VEL,
    ImuState, WindowState, imu_classical_to_invariant, symmetrize,
)

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class ImuSample:
    t: float
    omega: np.ndarray
    accel: np.ndarray


@dataclass
class NoiseParams:
    """Continuous-time noise densities.

    sigma_g [rad/s/sqrt(Hz)], sigma_a [m/s^2/sqrt(Hz)] are white noise;
    sigma_wg [rad/s^1.5], sigma_wa [m/s^2.5] drive the bias random walks;
    sigma_clock_rw [m/s^1.5] drives the receiver clock drift.
    """

    sigma_g: float = 3e-4
    sigma_a: float = 1e-3
    sigma_wg: float = 3e-5
    sigma_wa: float = 2e-4
    sigma_clock_rw: float = 0.05

    def __post_init__(self):
        for name in ("sigma_g", "sigma_a", "sigma_wg", "sigma_wa", "sigma_clock_rw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def scaled(self, factor: float) -> "NoiseParams":
        return NoiseParams(*(factor * x for x in (
            self.sigma_g, self.sigma_a, self.sigma_wg, self.sigma_wa, self.sigma_clock_rw)))


def _integrate(R, p, v, w, a, dt):
    dR = exp_so3(w * dt)
    R_mid = R @ exp_so3(0.5 * dt * w)
    f = R_mid @ a
    acc = f + GRAVITY
    R_next = R @ dR
    p_next = p + v * dt + 0.5 * dt * dt * acc
    v_next = v + acc * dt
    return R_next, p_next, v_next, R_mid, f


def propagate_mean(imu: ImuState, sample: ImuSample, dt: float) -> ImuState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    w = np.asarray(sample.omega, dtype=float) - imu.bg
    a = np.asarray(sample.accel, dtype=float) - imu.ba
    R, p, v, _, _ = _integrate(imu.R, imu.p, imu.v, w, a, dt)
    return ImuState(orthonormalize(R), p, v, imu.bg.copy(), imu.ba.copy())


def _transition_batch(R_next, p_next, v_next, R_mid, f, w, dt) -> np.ndarray:
    """Per-sample transitions ``(n, 15, 15)``; arguments carry a leading sample axis."""
    n = len(R_next)
    Phi = np.tile(np.eye(IMU_DIM), (n, 1, 1))
    G = skew(GRAVITY)
    Phi[:, POS, THETA] = 0.5 * dt * dt * G
    Phi[:, VEL, THETA] = dt * G
    Phi[:, POS, VEL] = dt * np.eye(3)

    Jr_dt = R_next @ right_jacobian_batch(w * dt) * dt
    Jh = R_mid @ right_jacobian_batch(0.5 * dt * w)
    SfJh = _skew_rows(f) @ Jh
    Phi[:, THETA, BG] = -Jr_dt
    Phi[:, POS, BG] = -_skew_rows(p_next) @ Jr_dt + 0.25 * dt**3 * SfJh
    Phi[:, VEL, BG] = -_skew_rows(v_next) @ Jr_dt + 0.5 * dt**2 * SfJh
    Phi[:, POS, BA] = -0.5 * dt * dt * R_mid
    Phi[:, VEL, BA] = -dt * R_mid
    return Phi


def _transition(R_next, p_next, v_next, R_mid, f, w, dt) -> np.ndarray:
    args = (R_next, p_next, v_next, R_mid, f, w)
    return _transition_batch(*(np.asarray(x)[None] for x in args), dt)[0]


def state_transition(prev: ImuState, next: ImuState, sample: ImuSample, dt: float) -> np.ndarray:
    """15x15 transition of the right-invariant IMU error over one sample.

    The bias columns are the exact first-order sensitivities of the
    integrator above, so white measurement noise enters through the same
    columns (see :func:`process_noise`).
    """
    w = np.asarray(sample.omega, dtype=float) - prev.bg
    a = np.asarray(sample.accel, dtype=float) - prev.ba
    R_mid = prev.R @ exp_so3(0.5 * dt * w)
    return _transition(next.R, next.p, next.v, R_mid, R_mid @ a, w, dt)


def process_noise(phi_I: np.ndarray, dt: float, noise: NoiseParams) -> np.ndarray:
    """Discrete process noise for one step.

    Per-sample white noise of variance ``sigma^2 / dt`` perturbs the
    measurements exactly like a bias error, so it maps through the bias
    columns of ``phi_I``; the bias random walks add ``sigma_w^2 dt``.
    """
    Q = np.zeros((IMU_DIM, IMU_DIM))
    Bg = phi_I[0:9, BG]
    Ba = phi_I[0:9, BA]
    Q[0:9, 0:9] = (noise.sigma_g**2 / dt) * (Bg @ Bg.T) + (noise.sigma_a**2 / dt) * (Ba @ Ba.T)
    Q[BG, BG] = noise.sigma_wg**2 * dt * np.eye(3)
    Q[BA, BA] = noise.sigma_wa**2 * dt * np.eye(3)
    return Q


def clock_transition(dt: float, n_steps: int, sigma_rw: float):
    """Transition and noise (5x5) of ``bias += drift * dt`` repeated ``n_steps`` times."""
    var_b = cov_bd = var_d = 0.0
    q = sigma_rw**2 * dt
    for _ in range(n_steps):
        var_b += 2.0 * dt * cov_bd + dt * dt * var_d
        cov_bd += dt * var_d
        var_d += q
    Phi = np.eye(5)
    Phi[0:4, 4] = dt * n_steps
    Q = np.zeros((5, 5))
    Q[0:4, 0:4] = var_b
    Q[0:4, 4] = Q[4, 0:4] = cov_bd
    Q[4, 4] = var_d
    return Phi, Q


def apply_transition(state: WindowState, phi_I: np.ndarray, Q_I: np.ndarray,
                     clock_phi=None, clock_Q=None) -> WindowState:
    """``P <- Phi P Phi^T + Q`` with Phi acting on the IMU (and clock) blocks only."""
    P = state.cov.copy()
    n = state.dim
    PI = phi_I @ P[:IMU_DIM, :]
    P[:IMU_DIM, :] = PI
    P[:, :IMU_DIM] = PI.T
    P[:IMU_DIM, :IMU_DIM] = PI[:, :IMU_DIM] @ phi_I.T + Q_I
    if state.clock is not None and clock_phi is not None:
        o = state.clock_offset
        C = clock_phi @ P[o:n, :]
        P[o:n, :] = C
        P[:, o:n] = C.T
        P[o:n, o:n] = C[:, o:n] @ clock_phi.T + clock_Q
    out = state.copy()
    out.cov = symmetrize(P)
    return out


def propagate_covariance(state: WindowState, phi_I: np.ndarray, dt: float, noise: NoiseParams) -> WindowState:
    """One-step covariance propagation; clones are static, the clock drifts."""
    Q = process_noise(phi_I, dt, noise)
    out = apply_transition(state, phi_I, Q, *clock_transition(dt, 1, noise.sigma_clock_rw))
    if out.clock is not None:
        out.clock.bias = out.clock.bias + out.clock.drift * dt
    return out


def propagate(state: WindowState, omegas: np.ndarray, accels: np.ndarray, dt: float,
              noise: NoiseParams):
    """Propagate through a batch of equally spaced samples.

    The per-step transitions and noise are accumulated in the 15x15 IMU space
    and applied to the window covariance once, which is algebraically the same
    as stepping the full covariance.

    Returns
    -------
    (WindowState, np.ndarray)
        Propagated state and the accumulated IMU transition, expressed in the
        state's own error convention.
    """
    imu = state.imu
    R, p, v = imu.R, imu.p, imu.v
    bg, ba = imu.bg, imu.ba
    W = np.asarray(omegas, dtype=float) - bg
    Acc = np.asarray(accels, dtype=float) - ba
    n = len(W)
    dR = exp_so3_batch(W * dt)
    half = exp_so3_batch(0.5 * dt * W)
    Rn = np.empty((n, 3, 3))
    Rm = np.empty((n, 3, 3))
    pn = np.empty((n, 3))
    vn = np.empty((n, 3))
    fs = np.empty((n, 3))
    for k in range(n):
        Rm[k] = R @ half[k]
        fs[k] = Rm[k] @ Acc[k]
        acc = fs[k] + GRAVITY
        p = p + v * dt + 0.5 * dt * dt * acc
        v = v + acc * dt
        R = R @ dR[k]
        Rn[k], pn[k], vn[k] = R, p, v
    Phis = _transition_batch(Rn, pn, vn, Rm, fs, W, dt)
    Qs = np.zeros((n, IMU_DIM, IMU_DIM))
    Bg = Phis[:, 0:9, BG]
    Ba = Phis[:, 0:9, BA]
    Qs[:, 0:9, 0:9] = (noise.sigma_g**2 / dt) * (Bg @ np.swapaxes(Bg, 1, 2)) + (
        noise.sigma_a**2 / dt) * (Ba @ np.swapaxes(Ba, 1, 2))
    Qs[:, BG, BG] = noise.sigma_wg**2 * dt * np.eye(3)
    Qs[:, BA, BA] = noise.sigma_wa**2 * dt * np.eye(3)
    Phi_acc = np.eye(IMU_DIM)
    Q_acc = np.zeros((IMU_DIM, IMU_DIM))
    for Phi, Q in zip(Phis, Qs):
        Phi_acc = Phi @ Phi_acc
        Q_acc = Phi @ Q_acc @ Phi.T + Q
    new_imu = ImuState(orthonormalize(R), p, v, bg.copy(), ba.copy())
    if state.convention == CLASSICAL:
        # classical = T(post)^-1 . invariant . T(prior)
        T0 = imu_classical_to_invariant(imu)
        T1inv = 2.0 * np.eye(IMU_DIM) - imu_classical_to_invariant(new_imu)
        Phi_acc = T1inv @ Phi_acc @ T0
        Q_acc = T1inv @ Q_acc @ T1inv.T
    clock_phi, clock_Q = clock_transition(dt, n, noise.sigma_clock_rw)
    out = apply_transition(state, Phi_acc, Q_acc, clock_phi, clock_Q)
    out.imu = new_imu
    if out.clock is not None:
        out.clock.bias = out.clock.bias + out.clock.drift * dt * n
    return out, Phi_acc
