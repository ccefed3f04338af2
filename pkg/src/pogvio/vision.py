"""Pose-only visual measurement model, its EKF update and the MSCKF baseline.

For a track observed in frames ``C1..CN`` and target frame ``Ck`` (k >= 2)::

    z_k = pi(R_Ck^T (g(X, x_obs) - p_Ck)) + n_k

The residual depends on the window poses through both the projection and
``g``, and on every observation's noise (directly at ``k``, and through ``g``).
"""

from __future__ import annotations

import logging
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import chi2

from .landmark import (
    DEPTH_MAX, DEPTH_MIN, EPS_COND, MULTI_VIEW, DegenerateGeometryError,
    FeatureTrack, LandmarkSolution, _gather, _skew_batch, landmark_position, solve_batch,
)
from .manifold import skew
from .state import CLASSICAL, CLONE_DIM, IMU_DIM, WindowState, ekf_update

logger = logging.getLogger(__name__)

Z_MIN = 0.05
VISION_GATE = 0.95


class BehindCameraError(ValueError):
    pass


@dataclass
class MeasurementBatch:
    """Stacked residual and Jacobians for one update.

    ``H_state`` columns follow the full window state. ``H_noise`` maps the
    track's raw observation noise (2 per observation) into the residual, so the
    measurement covariance is ``R_pixel * H_noise @ H_noise.T``.
    """

    residual: np.ndarray
    H_state: np.ndarray
    H_noise: np.ndarray
    R_pixel: float
    feature_ids: list = field(default_factory=list)

    @property
    def R_eff(self) -> np.ndarray:
        return self.R_pixel * (self.H_noise @ self.H_noise.T)

    def whitened(self, drop: int = 1):
        """Decorrelate the rows.

        The depth fit uses up one direction of the residual space: the
        residual stays exactly zero along it and ``R_eff`` is singular there.
        The ``drop`` weakest directions of ``H_noise`` are discarded and the
        rest are scaled so that the returned rows carry noise ``R_pixel * I``.
        """
        W = _whiten(self.H_noise, drop)
        return W @ self.residual, W @ self.H_state


def projection_jacobian(c: np.ndarray) -> np.ndarray:
    x, y, z = c
    return np.array([[1.0 / z, 0.0, -x / (z * z)], [0.0, 1.0 / z, -y / (z * z)]])


def project(clone, p_global, z_min: float = Z_MIN) -> np.ndarray:
    c = clone.R.T @ (np.asarray(p_global, dtype=float) - clone.p)
    if not c[2] > z_min:
        raise BehindCameraError(f"point depth {c[2]:.3f} m in frame {clone.frame_id}")
    return c[:2] / c[2]


def _to_state_columns(state: WindowState, frame_ids, H_poses: np.ndarray) -> np.ndarray:
    H = np.zeros((H_poses.shape[0], state.dim))
    index = {c.frame_id: k for k, c in enumerate(state.clones)}
    for j, fid in enumerate(frame_ids):
        k = index[fid]
        o = IMU_DIM + CLONE_DIM * k
        H[:, o : o + 6] += H_poses[:, 6 * j : 6 * j + 6]
        if state.convention == CLASSICAL:
            H[:, o : o + 3] += H_poses[:, 6 * j + 3 : 6 * j + 6] @ skew(state.clones[k].p)
    return H


def _camera_terms(Rk, pk, g):
    """Camera-frame points ``(B, T, 3)`` and ``J_pi R^T`` blocks ``(B, T, 2, 3)``."""
    c = np.einsum("btji,btj->bti", Rk, g[:, None, :] - pk)
    zc = c[..., 2]
    Jpi = np.zeros(c.shape[:2] + (2, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        Jpi[..., 0, 0] = Jpi[..., 1, 1] = 1.0 / zc
        Jpi[..., 0, 2] = -c[..., 0] / zc**2
        Jpi[..., 1, 2] = -c[..., 1] / zc**2
    return c, np.einsum("btij,btkj->btik", Jpi, Rk)


def _poseonly_batch(Rs, ps, xs, g, jac_poses, jac_obs, targets):
    """Pose-only residuals and Jacobians for ``B`` equal-length tracks."""
    B, n = xs.shape[:2]
    T = len(targets)
    c, A = _camera_terms(Rs[:, targets], ps[:, targets], g)
    H_poses = np.einsum("btij,bjk->btik", A, jac_poses).reshape(B, T, 2, n, 6)
    H_noise = -np.einsum("btij,bjk->btik", A, jac_obs).reshape(B, T, 2, n, 2)
    ASg = A @ _skew_batch(g)[:, None]
    for t, k in enumerate(targets):
        H_poses[:, t, :, k, 0:3] += ASg[:, t]
        H_poses[:, t, :, k, 3:6] -= A[:, t]
        H_noise[:, t, :, k, :] += np.eye(2)
    with np.errstate(divide="ignore", invalid="ignore"):
        residual = (xs[:, targets, :2] - c[..., :2] / c[..., 2:3]).reshape(B, 2 * T)
    return residual, H_poses.reshape(B, 2 * T, 6 * n), H_noise.reshape(B, 2 * T, 2 * n), c[..., 2]


def poseonly_jacobians(track: FeatureTrack, clones, landmark: LandmarkSolution, targets,
                       z_min: float = Z_MIN):
    """Residual and Jacobians of the pose-only model for target observation(s).

    ``targets`` are indices into ``track.obs`` (a single int is accepted).

    Returns
    -------
    (residual, H_poses, H_noise)
        Shapes ``(2T,)``, ``(2T, 6N)`` and ``(2T, 2N)``. ``H_poses`` columns
        are per observing clone ``(theta, p)`` in right-invariant coordinates.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=int))
    Rs, ps, xs = _gather(track, clones)
    g = np.asarray(landmark.position_global, dtype=float)
    r, Hp, Hn, z = _poseonly_batch(Rs[None], ps[None], xs[None], g[None],
                                   landmark.jac_poses[None], landmark.jac_obs[None], targets)
    if np.any(z <= z_min):
        raise BehindCameraError(f"track {track.feature_id} behind a target camera")
    return r[0], Hp[0], Hn[0]


def _whiten(H_noise, drop: int = 1):
    U, S, _ = np.linalg.svd(H_noise, full_matrices=False)
    keep = S.shape[-1] - drop
    return np.swapaxes(U[..., :keep], -1, -2) / S[..., :keep, None]


def poseonly_batch(state: WindowState, track: FeatureTrack, pixel_var: float, mode: str = MULTI_VIEW,
                   depth_range=(DEPTH_MIN, DEPTH_MAX)) -> Optional[MeasurementBatch]:
    """Row block of one track against all non-base observations, or None if rejected."""
    clones = state.clone_by_id()
    try:
        sol = landmark_position(track, clones, mode, depth_range)
    except DegenerateGeometryError:
        return None
    if not sol.accepted:
        return None
    targets = np.arange(1, len(track.obs))
    try:
        r, Hp, Hn = poseonly_jacobians(track, clones, sol, targets)
    except BehindCameraError:
        return None
    H = _to_state_columns(state, track.frame_ids, Hp)
    return MeasurementBatch(r, H, Hn, pixel_var, [track.feature_id])


@lru_cache(maxsize=None)
def _chi2_limit(prob: float, dof: int) -> float:
    return float(chi2.ppf(prob, dof))


def _gate(P, r, H, var, prob):
    S = H @ P @ H.T
    S[np.diag_indices_from(S)] += var
    try:
        nis = float(r @ np.linalg.solve(S, r))
    except np.linalg.LinAlgError:
        return False
    return nis <= _chi2_limit(prob, len(r))


def stacked_update(state: WindowState, blocks, var: float, gate: Optional[float] = VISION_GATE):
    """Gate ``(feature_id, r, H)`` blocks one by one, then run a single EKF update.

    Returns the updated state, the ids that entered and the stacked ``H``
    (``None`` when nothing was used).
    """
    rs, Hs, used = [], [], []
    P = state.cov
    for fid, r, H in blocks:
        cols = np.flatnonzero(np.any(H != 0.0, axis=0))
        if gate is not None and not _gate(P[np.ix_(cols, cols)], r, H[:, cols], var, gate):
            continue
        rs.append(r)
        Hs.append(H)
        used.append(fid)
    if not rs:
        return state, used, None
    r = np.concatenate(rs)
    H = np.vstack(Hs)
    try:
        return ekf_update(state, r, H, var), used, H
    except np.linalg.LinAlgError:
        logger.warning("innovation covariance not positive definite; skipping %d rows", len(r))
        return state, [], None


def poseonly_update(state: WindowState, tracks, pixel_var: float, mode: str = MULTI_VIEW,
                    gate: Optional[float] = VISION_GATE, depth_range=(DEPTH_MIN, DEPTH_MAX)):
    """Tightly-coupled update with every ready track, no null-space projection.

    ``pixel_var`` is the variance of one normalized-plane coordinate. Each
    track's rows are decorrelated (see :meth:`MeasurementBatch.whitened`) and
    chi-square gated before the single stacked update.

    Returns
    -------
    (WindowState, list, list)
        Updated state, ids of tracks that entered the update, and ids of
        tracks rejected by the chi-square gate.
    """
    blocks = poseonly_blocks(state, tracks, pixel_var, mode, depth_range)
    new, used, _ = stacked_update(state, blocks, pixel_var, gate)
    return new, used, [b[0] for b in blocks if b[0] not in used]


def _grouped(state: WindowState, tracks):
    """Yield equal-length track groups with their clone indices and stacked arrays."""
    index = {c.frame_id: k for k, c in enumerate(state.clones)}
    R_all = np.stack([c.R for c in state.clones])
    p_all = np.stack([c.p for c in state.clones])
    groups = {}
    for t in tracks:
        if len(t.obs) >= 2:
            groups.setdefault(len(t.obs), []).append(t)
    for n in sorted(groups):
        group = groups[n]
        k = np.array([[index[o.frame_id] for o in t.obs] for t in group])
        xs = np.ones((len(group), n, 3))
        xs[:, :, :2] = [[o.xy for o in t.obs] for t in group]
        yield group, k, R_all[k], p_all[k], xs


def _scatter(state: WindowState, group, sel, keep, k, ps, r, Hp):
    """Map per-clone Jacobian columns into full-state rows."""
    n = k.shape[1]
    if state.convention == CLASSICAL:
        for j in range(n):
            Hp[:, :, 6 * j : 6 * j + 3] += Hp[:, :, 6 * j + 3 : 6 * j + 6] @ _skew_batch(ps[sel, j])
    cols = (IMU_DIM + CLONE_DIM * k[sel][:, :, None] + np.arange(CLONE_DIM)).reshape(len(sel), -1)
    out = []
    for b, i in enumerate(sel):
        if keep[b]:
            H = np.zeros((Hp.shape[1], state.dim))
            H[:, cols[b]] = Hp[b]
            out.append((group[i].feature_id, r[b], H))
    return out


def poseonly_blocks(state: WindowState, tracks, pixel_var: float, mode: str = MULTI_VIEW,
                    depth_range=(DEPTH_MIN, DEPTH_MAX), eps_cond: float = EPS_COND) -> list:
    """Whitened ``(feature_id, r, H)`` blocks for every track with a usable landmark.

    Tracks of equal length are processed together; the result equals calling
    :func:`poseonly_batch` and :meth:`MeasurementBatch.whitened` per track.
    """
    out = []
    for group, k, Rs, ps, xs in _grouped(state, tracks):
        n = xs.shape[1]
        d, s, g, jp, jo = solve_batch(Rs, ps, xs, mode)
        ok = (s >= eps_cond) & (d >= depth_range[0]) & (d <= depth_range[1])
        sel = np.flatnonzero(ok)
        if not len(sel):
            continue
        r, Hp, Hn, z = _poseonly_batch(Rs[sel], ps[sel], xs[sel], g[sel], jp[sel], jo[sel], np.arange(1, n))
        W = _whiten(Hn)
        r = np.einsum("bij,bj->bi", W, r)
        Hp = W @ Hp
        out.extend(_scatter(state, group, sel, np.all(z > Z_MIN, axis=1), k, ps, r, Hp))
    return out


def _msckf_rows(Rs, ps, xs, pf):
    """Stacked residuals, pose Jacobians and landmark Jacobians for ``B`` tracks."""
    B, n = xs.shape[:2]
    c, A = _camera_terms(Rs, ps, pf)
    Hf = A.reshape(B, 2 * n, 3)
    Hp = np.zeros((B, n, 2, n, 6))
    ASf = A @ _skew_batch(pf)[:, None]
    for j in range(n):
        Hp[:, j, :, j, 0:3] = ASf[:, j]
        Hp[:, j, :, j, 3:6] = -A[:, j]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (xs[..., :2] - c[..., :2] / c[..., 2:3]).reshape(B, 2 * n)
    return r, Hp.reshape(B, 2 * n, 6 * n), Hf, c[..., 2]


def _left_nullspace(Hf):
    Q, Rf = np.linalg.qr(Hf, mode="complete")
    sv = np.abs(np.diagonal(Rf, axis1=-2, axis2=-1))
    ok = sv.min(axis=-1) >= 1e-9 * np.maximum(sv.max(axis=-1), 1e-300)
    return Q[..., 3:], ok


def msckf_batch(state: WindowState, track: FeatureTrack, pixel_var: float,
                depth_range=(DEPTH_MIN, DEPTH_MAX)):
    """Null-space projected rows of the classical landmark-based model.

    The landmark comes from the same depth solver. Projecting onto the left
    null space of the landmark Jacobian is equivalent to giving the landmark
    an infinite prior covariance.

    Returns ``(r, H, N, Hf)`` or None when the track is unusable.
    """
    clones = state.clone_by_id()
    try:
        sol = landmark_position(track, clones, MULTI_VIEW, depth_range, with_jacobians=False)
    except DegenerateGeometryError:
        return None
    if not sol.accepted:
        return None
    Rs, ps, xs = _gather(track, clones)
    r, Hp, Hf, z = _msckf_rows(Rs[None], ps[None], xs[None], sol.position_global[None])
    if np.any(z <= Z_MIN):
        return None
    N, ok = _left_nullspace(Hf)
    if not ok[0]:
        return None
    N = N[0]
    H = _to_state_columns(state, track.frame_ids, N.T @ Hp[0])
    return N.T @ r[0], H, N, Hf[0]


def msckf_blocks(state: WindowState, tracks, pixel_var: float, depth_range=(DEPTH_MIN, DEPTH_MAX),
                 eps_cond: float = EPS_COND) -> list:
    """Projected ``(feature_id, r, H)`` blocks, tracks of equal length batched."""
    out = []
    for group, k, Rs, ps, xs in _grouped(state, tracks):
        d, s, g, _, _ = solve_batch(Rs, ps, xs, MULTI_VIEW, with_jacobians=False)
        ok = (s >= eps_cond) & (d >= depth_range[0]) & (d <= depth_range[1])
        sel = np.flatnonzero(ok)
        if not len(sel):
            continue
        r, Hp, Hf, z = _msckf_rows(Rs[sel], ps[sel], xs[sel], g[sel])
        N, rank_ok = _left_nullspace(Hf)
        Nt = np.swapaxes(N, 1, 2)
        r = np.einsum("bij,bj->bi", Nt, r)
        Hp = Nt @ Hp
        keep = rank_ok & np.all(z > Z_MIN, axis=1)
        out.extend(_scatter(state, group, sel, keep, k, ps, r, Hp))
    return out


def msckf_update_baseline(state: WindowState, tracks, pixel_var: float,
                          gate: Optional[float] = VISION_GATE, depth_range=(DEPTH_MIN, DEPTH_MAX)):
    """MSCKF-style delayed update with landmark null-space projection."""
    blocks = msckf_blocks(state, tracks, pixel_var, depth_range)
    new, used, _ = stacked_update(state, blocks, pixel_var, gate)
    return new, used, [b[0] for b in blocks if b[0] not in used]


def joint_covariance(P_X: np.ndarray, H_g: np.ndarray) -> np.ndarray:
    """Joint pose/landmark covariance implied by a landmark that is a function of the poses."""
    PHt = P_X @ H_g.T
    top = np.hstack([P_X, PHt])
    bottom = np.hstack([PHt.T, H_g @ PHt])
    return np.vstack([top, bottom])
