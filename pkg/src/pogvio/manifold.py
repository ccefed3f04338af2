"""SO(3) primitives and the right-invariant composite group.

Rotations are plain ``(3, 3)`` float arrays. A composite element
``X = (R, x_1, ..., x_m)`` pairs one rotation with ``m`` 3-vectors, and its
right-invariant error is

    R     = exp(theta) @ R_hat
    x_i   = exp(theta) @ x_hat_i + x_tilde_i
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SMALL_ANGLE = 1e-7
LOG_BRANCH_MARGIN = 1e-6
ORTHO_TOL = 1e-9


class BranchAmbiguityError(ValueError):
    """Raised when a rotation angle is too close to pi for a unique logarithm."""


def skew(v) -> np.ndarray:
    """Return the matrix ``[v]x`` such that ``skew(v) @ w == cross(v, w)``."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S: np.ndarray) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def exp_so3(theta) -> np.ndarray:
    """Rodrigues' formula, with a second-order series near zero."""
    t0, t1, t2 = float(theta[0]), float(theta[1]), float(theta[2])
    angle2 = t0 * t0 + t1 * t1 + t2 * t2
    K = np.array([[0.0, -t2, t1], [t2, 0.0, -t0], [-t1, t0, 0.0]])
    if angle2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    angle = math.sqrt(angle2)
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / angle2
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R``.

    Raises
    ------
    BranchAmbiguityError
        If the rotation angle is within ``1e-6`` of pi.
    """
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    c = min(1.0, max(-1.0, c))
    s_vec = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = math.sqrt(s_vec @ s_vec)
    angle = math.atan2(s, c)
    if angle > math.pi - LOG_BRANCH_MARGIN:
        raise BranchAmbiguityError(f"rotation angle {angle:.9f} too close to pi")
    if angle < SMALL_ANGLE:
        return s_vec * (1.0 + angle * angle / 6.0)
    if c > 0.0:
        return (angle / s) * s_vec
    # large angles: recover the axis from the symmetric part, sign from s_vec
    M = 0.5 * (R + R.T) - c * np.eye(3)
    i = int(np.argmax(np.diag(M)))
    axis = M[:, i] / math.sqrt((1.0 - c) * M[i, i])
    if axis @ s_vec < 0.0:
        axis = -axis
    return angle * axis


def right_jacobian(theta) -> np.ndarray:
    """Right Jacobian of SO(3): ``exp(theta + d) ~= exp(theta) exp(J_r(theta) d)``."""
    t0, t1, t2 = float(theta[0]), float(theta[1]), float(theta[2])
    angle2 = t0 * t0 + t1 * t1 + t2 * t2
    K = np.array([[0.0, -t2, t1], [t2, 0.0, -t0], [-t1, t0, 0.0]])
    if angle2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    angle = math.sqrt(angle2)
    a = (1.0 - math.cos(angle)) / angle2
    b = (angle - math.sin(angle)) / (angle2 * angle)
    return np.eye(3) - a * K + b * (K @ K)


def _skew_rows(theta: np.ndarray) -> np.ndarray:
    K = np.zeros(theta.shape[:-1] + (3, 3))
    K[..., 0, 1] = -theta[..., 2]
    K[..., 0, 2] = theta[..., 1]
    K[..., 1, 0] = theta[..., 2]
    K[..., 1, 2] = -theta[..., 0]
    K[..., 2, 0] = -theta[..., 1]
    K[..., 2, 1] = theta[..., 0]
    return K


def _series_coeffs(theta, small, big):
    angle2 = np.einsum("...i,...i->...", theta, theta)
    tiny = angle2 < SMALL_ANGLE * SMALL_ANGLE
    safe = np.where(tiny, 1.0, angle2)
    a, b = big(np.sqrt(safe), safe)
    a = np.where(tiny, small[0], a)
    b = np.where(tiny, small[1], b)
    return a[..., None, None], b[..., None, None]


def exp_so3_batch(theta: np.ndarray) -> np.ndarray:
    """:func:`exp_so3` over the leading axes of ``theta`` (..., 3)."""
    theta = np.asarray(theta, dtype=float)
    K = _skew_rows(theta)
    a, b = _series_coeffs(theta, (1.0, 0.5), lambda t, t2: (np.sin(t) / t, (1.0 - np.cos(t)) / t2))
    return np.eye(3) + a * K + b * (K @ K)


def right_jacobian_batch(theta: np.ndarray) -> np.ndarray:
    """:func:`right_jacobian` over the leading axes of ``theta`` (..., 3)."""
    theta = np.asarray(theta, dtype=float)
    K = _skew_rows(theta)
    a, b = _series_coeffs(theta, (0.5, 1.0 / 6.0),
                          lambda t, t2: ((1.0 - np.cos(t)) / t2, (t - np.sin(t)) / (t2 * t)))
    return np.eye(3) - a * K + b * (K @ K)


def is_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.max(np.abs(R.T @ R - np.eye(3))) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def orthonormalize(R: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    """Project onto SO(3) by polar decomposition when drift exceeds ``tol``."""
    if np.max(np.abs(R.T @ R - np.eye(3))) <= tol:
        return R
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass
class GroupElement:
    rotation: np.ndarray
    vectors: list = field(default_factory=list)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.vectors = [np.asarray(x, dtype=float) for x in self.vectors]

    @property
    def m(self) -> int:
        return len(self.vectors)


@dataclass
class TangentError:
    theta: np.ndarray
    vector_errors: list = field(default_factory=list)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.vector_errors = [np.asarray(x, dtype=float) for x in self.vector_errors]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, *self.vector_errors])

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "TangentError":
        v = np.asarray(v, dtype=float)
        if v.size % 3 or v.size < 3:
            raise ValueError("tangent vector length must be a positive multiple of 3")
        return cls(v[:3], [v[i : i + 3] for i in range(3, v.size, 3)])


def boxplus(error: TangentError, estimate: GroupElement) -> GroupElement:
    if len(error.vector_errors) != estimate.m:
        raise ValueError(
            f"slot mismatch: error has {len(error.vector_errors)} vectors, "
            f"estimate has {estimate.m}"
        )
    dR = exp_so3(error.theta)
    return GroupElement(
        dR @ estimate.rotation,
        [dR @ x + e for x, e in zip(estimate.vectors, error.vector_errors)],
    )


def boxminus(X: GroupElement, Xhat: GroupElement) -> TangentError:
    if X.m != Xhat.m:
        raise ValueError(f"slot mismatch: {X.m} vs {Xhat.m} vectors")
    theta = log_so3(X.rotation @ Xhat.rotation.T)
    dR = exp_so3(theta)
    return TangentError(theta, [x - dR @ xh for x, xh in zip(X.vectors, Xhat.vectors)])
