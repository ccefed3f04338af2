"""Multi-view pose-only landmark representation.

A feature first seen in base frame ``C1`` and later in ``C2..CN`` satisfies,
for every later frame ``i``,

    d * [x_i]x R_{Ci C1} x_1 = -[x_i]x p^{Ci}_{C1}

which stacks into ``A d = b`` with scalar depth ``d``. Its global position

    p_f = d * R_{G C1} x_1 + p_{G C1} =: g(poses, observations)

is a closed-form function of the window poses and the raw observations, so no
landmark variable ever enters the filter state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

MULTI_VIEW = "multi"
TWO_VIEW = "two"

EPS_COND = 1e-10
DEPTH_MIN = 0.1
DEPTH_MAX = 200.0

_E = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


class DegenerateGeometryError(ValueError):
    """The depth normal equation is too weakly conditioned (no parallax)."""


@dataclass
class NormalizedObs:
    frame_id: int
    xy: np.ndarray

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=float)


@dataclass
class FeatureTrack:
    feature_id: int
    base_frame_id: int
    obs: list = field(default_factory=list)

    @property
    def frame_ids(self) -> list:
        return [o.frame_id for o in self.obs]

    def __len__(self) -> int:
        return len(self.obs)


@dataclass
class LandmarkSolution:
    depth: float
    position_global: np.ndarray
    jac_poses: Optional[np.ndarray]
    jac_obs: Optional[np.ndarray]
    condition: float
    frame_ids: list
    accepted: bool = True


def _skew_batch(X: np.ndarray) -> np.ndarray:
    S = np.zeros(X.shape[:-1] + (3, 3))
    S[..., 0, 1] = -X[..., 2]
    S[..., 0, 2] = X[..., 1]
    S[..., 1, 0] = X[..., 2]
    S[..., 1, 2] = -X[..., 0]
    S[..., 2, 0] = -X[..., 1]
    S[..., 2, 1] = X[..., 0]
    return S


def _gather(track: FeatureTrack, clones):
    lookup = clones if isinstance(clones, Mapping) else {c.frame_id: c for c in clones}
    try:
        cl = [lookup[o.frame_id] for o in track.obs]
    except KeyError as exc:
        raise KeyError(f"track {track.feature_id}: frame {exc.args[0]} is not in the window") from None
    Rs = np.stack([c.R for c in cl])
    ps = np.stack([c.p for c in cl])
    xs = np.ones((len(track.obs), 3))
    xs[:, :2] = [o.xy for o in track.obs]
    return Rs, ps, xs


def _row_indices(n_obs: int, mode: str) -> np.ndarray:
    if n_obs < 2:
        raise ValueError("at least two observations are required")
    if mode == MULTI_VIEW:
        return np.arange(1, n_obs)
    if mode == TWO_VIEW:
        return np.array([n_obs - 1])
    raise ValueError(f"unknown landmark mode {mode!r}")


def _system(Rs, ps, xs, rows):
    """Depth constraint rows for a batch of equal-length tracks (leading axis)."""
    w = np.einsum("bij,bj->bi", Rs[:, 0], xs[:, 0])
    M = np.einsum("brij,brkj->brik", _skew_batch(xs[:, rows]), Rs[:, rows])  # [x_i]x R_i^T
    a = np.einsum("brij,bj->bri", M, w)
    b = np.einsum("brij,brj->bri", M, ps[:, rows] - ps[:, :1])
    return w, M, a, b


def _solve_batch(a, b):
    s = np.einsum("bri,bri->b", a, a)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.einsum("bri,bri->b", a, b) / s
    return d, s


def build_linear_system(track: FeatureTrack, clones, mode: str = MULTI_VIEW):
    """Stack the depth constraints of every non-base observation.

    Returns ``A`` with shape ``(3(N-1), 1)`` and ``b`` with shape ``(3(N-1),)``
    (a single 3-row block in two-view mode).
    """
    Rs, ps, xs = _gather(track, clones)
    _, _, a, b = _system(Rs[None], ps[None], xs[None], _row_indices(len(xs), mode))
    return a.reshape(-1, 1), b.reshape(-1)


def solve_depth(A, b, eps_cond: float = EPS_COND):
    """Scalar least squares ``d = (A^T A)^-1 A^T b``; returns ``(depth, A^T A)``."""
    A = np.asarray(A, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    AtA = float(A @ A)
    if not AtA >= eps_cond:
        raise DegenerateGeometryError(f"A^T A = {AtA:.3e} below {eps_cond:.1e}")
    return float(A @ b) / AtA, AtA


def _jacobians(Rs, ps, rows, w, M, a, b, d, s):
    """Batched ``dg/d poses`` ``(B, 3, 6N)`` and ``dg/d observations`` ``(B, 3, 2N)``."""
    B, n = Rs.shape[:2]
    Sw = _skew_batch(w)
    Sp1 = _skew_batch(ps[:, 0])
    c = b - 2.0 * d[:, None, None] * a
    # row vectors c_i^T M_i and a_i^T M_i
    cM = np.einsum("bri,brij->brj", c, M)
    aM = np.einsum("bri,brij->brj", a, M)

    dd = np.zeros((B, n, 8))  # per observation: theta(3), p(3), obs(2)
    dd[:, rows, 0:3] = np.einsum("brj,bjk->brk", cM, Sw) - np.einsum("brj,bjk->brk", aM, Sp1)
    dd[:, rows, 3:6] = aM
    dd[:, 0, 0:6] = -dd[:, rows, 0:6].sum(axis=1)
    u = np.einsum("brji,bj->bri", Rs[:, rows], w)  # R_i^T w
    q = np.einsum("brji,brj->bri", Rs[:, rows], ps[:, rows] - ps[:, :1])  # R_i^T (p_i - p_1)
    dd[:, rows, 6:8] = -(np.einsum("bri,brij->brj", c, _skew_batch(u))
                         + np.einsum("bri,brij->brj", a, _skew_batch(q)))[..., :2]
    dd[:, 0, 6:8] = np.einsum("bj,bjk->bk", cM.sum(axis=1), Rs[:, 0])[:, :2]
    dd /= s[:, None, None]

    jac_poses = np.einsum("bi,bnj->binj", w, dd[..., 0:6]).reshape(B, 3, 6 * n)
    jac_obs = np.einsum("bi,bnj->binj", w, dd[..., 6:8]).reshape(B, 3, 2 * n)
    jac_poses[:, :, 0:3] -= d[:, None, None] * Sw + Sp1
    jac_poses[:, :, 3:6] += np.eye(3)
    jac_obs[:, :, 0:2] += d[:, None, None] * Rs[:, 0, :, :2]
    return jac_poses, jac_obs


def solve_batch(Rs, ps, xs, mode: str = MULTI_VIEW, with_jacobians: bool = True):
    """Depth, position and Jacobians for ``B`` tracks of equal length at once.

    Returns ``(d, s, g, jac_poses, jac_obs)``; ``s = A^T A`` lets the caller
    apply the conditioning threshold. Degenerate entries hold non-finite values.
    """
    rows = _row_indices(xs.shape[1], mode)
    w, M, a, b = _system(Rs, ps, xs, rows)
    d, s = _solve_batch(a, b)
    g = d[:, None] * w + ps[:, 0]
    if not with_jacobians:
        return d, s, g, None, None
    ok = s > 0
    d_safe = np.where(ok, d, 0.0)
    s_safe = np.where(ok, s, 1.0)
    jp, jo = _jacobians(Rs, ps, rows, w, M, a, b, d_safe, s_safe)
    return d, s, g, jp, jo


def landmark_position(track: FeatureTrack, clones, mode: str = MULTI_VIEW,
                      depth_range=(DEPTH_MIN, DEPTH_MAX), eps_cond: float = EPS_COND,
                      with_jacobians: bool = True) -> LandmarkSolution:
    """Solve the depth, evaluate ``g`` and (optionally) its Jacobians.

    Jacobian columns follow the track's observation order: six per observing
    clone ``(theta, p)`` in right-invariant coordinates and two per
    normalized observation.

    Raises
    ------
    DegenerateGeometryError
        When the depth normal equation is ill-conditioned. A depth outside
        ``depth_range`` is not an error: the returned solution has
        ``accepted=False``.
    """
    Rs, ps, xs = _gather(track, clones)
    d, s, g, jp, jo = solve_batch(Rs[None], ps[None], xs[None], mode, with_jacobians)
    d, s = float(d[0]), float(s[0])
    if not s >= eps_cond:
        raise DegenerateGeometryError(f"A^T A = {s:.3e} below {eps_cond:.1e}")
    ids = track.frame_ids
    if not depth_range[0] <= d <= depth_range[1]:
        return LandmarkSolution(d, g[0], None, None, s, ids, accepted=False)
    if with_jacobians:
        jp, jo = jp[0], jo[0]
    return LandmarkSolution(d, g[0], jp, jo, s, ids)


def landmark_jacobians(track: FeatureTrack, clones, mode: str = MULTI_VIEW):
    """``(dg/d poses, dg/d observations)`` with shapes ``(3, 6N)`` and ``(3, 2N)``."""
    sol = landmark_position(track, clones, mode, depth_range=(-np.inf, np.inf))
    return sol.jac_poses, sol.jac_obs


def landmark_from_arrays(Rs: Sequence, ps: Sequence, xys: Sequence, mode: str = MULTI_VIEW):
    """Convenience wrapper for raw arrays (frame ids are assigned 0..N-1)."""
    from .state import CameraClone

    clones = [CameraClone(i, np.asarray(R, float), np.asarray(p, float)) for i, (R, p) in enumerate(zip(Rs, ps))]
    track = FeatureTrack(0, 0, [NormalizedObs(i, xy) for i, xy in enumerate(xys)])
    return landmark_position(track, clones, mode)
