"""Sliding-window filter state, stochastic cloning and the generic EKF update.

Error-state layout (also the covariance layout)::

    [theta_I, p_I, v_I, b_g, b_a | (theta_C, p_C) per clone, oldest first | dt_r(4), dt_r_dot]

Pose and velocity errors are right-invariant by default. A state can instead
carry the ``"classical"`` convention (global attitude error, additive position
and velocity errors); it is used as a consistency contrast only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .manifold import boxminus, exp_so3, log_so3, orthonormalize, skew, GroupElement

logger = logging.getLogger(__name__)

IMU_DIM = 15
CLONE_DIM = 6
N_CONSTELLATIONS = 4
CLOCK_DIM = N_CONSTELLATIONS + 1

THETA = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)

INVARIANT = "invariant"
CLASSICAL = "classical"


class WindowFullError(RuntimeError):
    pass


@dataclass
class ImuState:
    R: np.ndarray
    p: np.ndarray
    v: np.ndarray
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "ImuState":
        return ImuState(self.R.copy(), self.p.copy(), self.v.copy(), self.bg.copy(), self.ba.copy())


@dataclass
class CameraClone:
    frame_id: int
    R: np.ndarray
    p: np.ndarray

    def copy(self) -> "CameraClone":
        return CameraClone(self.frame_id, self.R.copy(), self.p.copy())


@dataclass
class ClockState:
    """Receiver clock biases (m) per constellation GPS/BDS/GAL/GLO and shared drift (m/s)."""

    bias: np.ndarray = field(default_factory=lambda: np.zeros(N_CONSTELLATIONS))
    drift: float = 0.0

    def copy(self) -> "ClockState":
        return ClockState(self.bias.copy(), float(self.drift))


@dataclass(frozen=True)
class CameraExtrinsic:
    """Fixed camera pose in the IMU frame."""

    R_IC: np.ndarray = field(default_factory=lambda: np.eye(3))
    p_IC: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class WindowState:
    imu: ImuState
    clones: list
    cov: np.ndarray
    clock: Optional[ClockState] = None
    max_clones: int = 10
    convention: str = INVARIANT

    @property
    def dim(self) -> int:
        return IMU_DIM + CLONE_DIM * len(self.clones) + (CLOCK_DIM if self.clock is not None else 0)

    @property
    def clock_offset(self) -> int:
        if self.clock is None:
            raise ValueError("state has no clock block")
        return IMU_DIM + CLONE_DIM * len(self.clones)

    @property
    def frame_ids(self) -> list:
        return [c.frame_id for c in self.clones]

    def clone_index(self, frame_id: int) -> int:
        for i, c in enumerate(self.clones):
            if c.frame_id == frame_id:
                return i
        raise KeyError(f"frame {frame_id} not in window")

    def clone_offset(self, frame_id: int) -> int:
        return IMU_DIM + CLONE_DIM * self.clone_index(frame_id)

    def clone_by_id(self) -> dict:
        return {c.frame_id: c for c in self.clones}

    def copy(self) -> "WindowState":
        return WindowState(
            self.imu.copy(),
            [c.copy() for c in self.clones],
            self.cov.copy(),
            None if self.clock is None else self.clock.copy(),
            self.max_clones,
            self.convention,
        )

    def check(self) -> None:
        if self.cov.shape != (self.dim, self.dim):
            raise ValueError(f"covariance shape {self.cov.shape} does not match dim {self.dim}")
        ids = self.frame_ids
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("clone frame ids must be strictly increasing")


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def clone_pose(imu: ImuState, extrinsic: CameraExtrinsic):
    return imu.R @ extrinsic.R_IC, imu.p + imu.R @ extrinsic.p_IC


def clone_jacobian(imu: ImuState, extrinsic: CameraExtrinsic, convention: str = INVARIANT) -> np.ndarray:
    """Jacobian (6x15) of the new clone's error with respect to the IMU error.

    Under the right-invariant error the clone inherits the IMU rotation and
    position errors exactly, independent of the extrinsic.
    """
    J = np.zeros((CLONE_DIM, IMU_DIM))
    J[0:3, THETA] = np.eye(3)
    J[3:6, POS] = np.eye(3)
    if convention == CLASSICAL:
        J[3:6, THETA] = -skew(imu.R @ extrinsic.p_IC)
    return J


def clone_camera(state: WindowState, extrinsic: CameraExtrinsic, frame_id: int) -> WindowState:
    """Append a stochastic clone of the current camera pose."""
    if len(state.clones) >= state.max_clones:
        raise WindowFullError(f"window already holds {state.max_clones} clones")
    if state.clones and frame_id <= state.clones[-1].frame_id:
        raise ValueError("clone frame ids must be strictly increasing")
    R_GC, p_GC = clone_pose(state.imu, extrinsic)
    J = clone_jacobian(state.imu, extrinsic, state.convention)

    n = state.dim
    at = IMU_DIM + CLONE_DIM * len(state.clones)
    P = state.cov
    JP = J @ P[:IMU_DIM, :]  # 6 x n
    new = np.empty((n + CLONE_DIM, n + CLONE_DIM))
    keep = np.r_[0:at, at + CLONE_DIM : n + CLONE_DIM]
    new[np.ix_(keep, keep)] = P
    new[at : at + CLONE_DIM, keep] = JP
    new[keep, at : at + CLONE_DIM] = JP.T
    new[at : at + CLONE_DIM, at : at + CLONE_DIM] = JP[:, :IMU_DIM] @ J.T

    out = state.copy()
    out.clones.append(CameraClone(frame_id, R_GC, p_GC))
    out.cov = symmetrize(new)
    return out


def marginalize_clone(state: WindowState, frame_id: int) -> WindowState:
    """Drop one clone; for a Gaussian in covariance form this is submatrix selection."""
    idx = state.clone_index(frame_id)
    o = IMU_DIM + CLONE_DIM * idx
    keep = np.r_[0:o, o + CLONE_DIM : state.dim]
    out = state.copy()
    del out.clones[idx]
    out.cov = symmetrize(state.cov[np.ix_(keep, keep)])
    return out


def invariant_error(truth: WindowState, estimate: WindowState) -> np.ndarray:
    """Right-invariant error of ``truth`` relative to ``estimate`` in covariance ordering."""
    if truth.frame_ids != estimate.frame_ids or (truth.clock is None) != (estimate.clock is None):
        raise ValueError("truth and estimate have different structure")
    e = np.zeros(estimate.dim)
    ti, ei = truth.imu, estimate.imu
    err = boxminus(GroupElement(ti.R, [ti.p, ti.v]), GroupElement(ei.R, [ei.p, ei.v]))
    e[THETA] = err.theta
    e[POS], e[VEL] = err.vector_errors
    e[BG] = ti.bg - ei.bg
    e[BA] = ti.ba - ei.ba
    for k, (tc, ec) in enumerate(zip(truth.clones, estimate.clones)):
        o = IMU_DIM + CLONE_DIM * k
        err = boxminus(GroupElement(tc.R, [tc.p]), GroupElement(ec.R, [ec.p]))
        e[o : o + 3] = err.theta
        e[o + 3 : o + 6] = err.vector_errors[0]
    if truth.clock is not None:
        o = estimate.clock_offset
        e[o : o + 4] = truth.clock.bias - estimate.clock.bias
        e[o + 4] = truth.clock.drift - estimate.clock.drift
    return e


def pose_error(R_true, p_true, R_est, p_est) -> np.ndarray:
    """6-dof right-invariant pose error ``(theta, p_tilde)``."""
    theta = log_so3(R_true @ R_est.T)
    return np.concatenate([theta, p_true - exp_so3(theta) @ p_est])


def classical_to_invariant(state: WindowState) -> np.ndarray:
    """Linear map T with ``invariant_error = T @ classical_error`` at the estimate.

    From ``p = exp(theta) p_hat + p_tilde = p_hat + dp`` to first order:
    ``p_tilde = dp + [p_hat]x theta`` (same for velocity).
    """
    T = np.eye(state.dim)
    T[POS, THETA] = skew(state.imu.p)
    T[VEL, THETA] = skew(state.imu.v)
    for k, c in enumerate(state.clones):
        o = IMU_DIM + CLONE_DIM * k
        T[o + 3 : o + 6, o : o + 3] = skew(c.p)
    return T


def invariant_to_classical(state: WindowState) -> np.ndarray:
    T = classical_to_invariant(state)
    # unipotent block-lower-triangular: inverse flips the off-diagonal sign
    return 2.0 * np.eye(state.dim) - T


def imu_classical_to_invariant(imu: ImuState) -> np.ndarray:
    T = np.eye(IMU_DIM)
    T[POS, THETA] = skew(imu.p)
    T[VEL, THETA] = skew(imu.v)
    return T


def invariant_covariance(state: WindowState) -> np.ndarray:
    """State covariance expressed in right-invariant coordinates."""
    if state.convention == INVARIANT:
        return state.cov
    T = classical_to_invariant(state)
    return T @ state.cov @ T.T


def apply_correction(state: WindowState, dx: np.ndarray) -> WindowState:
    """Retract an error-state correction onto the state (in place on a copy)."""
    out = state.copy()
    imu = out.imu
    classical = state.convention == CLASSICAL
    dR = exp_so3(dx[THETA])
    imu.R = orthonormalize(dR @ imu.R)
    if classical:
        imu.p = imu.p + dx[POS]
        imu.v = imu.v + dx[VEL]
    else:
        imu.p = dR @ imu.p + dx[POS]
        imu.v = dR @ imu.v + dx[VEL]
    imu.bg = imu.bg + dx[BG]
    imu.ba = imu.ba + dx[BA]
    for k, c in enumerate(out.clones):
        o = IMU_DIM + CLONE_DIM * k
        dRc = exp_so3(dx[o : o + 3])
        c.R = orthonormalize(dRc @ c.R)
        c.p = (c.p if classical else dRc @ c.p) + dx[o + 3 : o + 6]
    if out.clock is not None:
        o = out.clock_offset
        out.clock.bias = out.clock.bias + dx[o : o + 4]
        out.clock.drift = float(out.clock.drift + dx[o + 4])
    return out


def ekf_update(state: WindowState, r: np.ndarray, H: np.ndarray, R) -> WindowState:
    """Joseph-form EKF update; ``R`` is a full matrix, a diagonal vector or a scalar.

    Raises ``np.linalg.LinAlgError`` when the innovation covariance is not
    positive definite.
    """
    P = state.cov
    m = H.shape[0]
    if np.ndim(R) == 0:
        Rm = float(R) * np.eye(m)
    elif np.ndim(R) == 1:
        Rm = np.diag(R)
    else:
        Rm = R
    PHt = P @ H.T
    S = symmetrize(H @ PHt + Rm)
    c = cho_factor(S)
    K = cho_solve(c, PHt.T).T
    dx = K @ r
    out = apply_correction(state, dx)
    IKH = np.eye(P.shape[0]) - K @ H
    out.cov = symmetrize(IKH @ P @ IKH.T + K @ Rm @ K.T)
    return out


def innovation_nis(P: np.ndarray, r: np.ndarray, H: np.ndarray, R) -> float:
    """Normalized innovation squared ``r^T (H P H^T + R)^-1 r``."""
    m = H.shape[0]
    Rm = float(R) * np.eye(m) if np.ndim(R) == 0 else (np.diag(R) if np.ndim(R) == 1 else R)
    S = symmetrize(H @ P @ H.T + Rm)
    return float(r @ np.linalg.solve(S, r))
