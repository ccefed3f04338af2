"""RMSE, NEES and numerical observability checks over filter outputs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .manifold import exp_so3, log_so3
from .propagation import GRAVITY
from .state import CLASSICAL, IMU_DIM, ImuState, imu_classical_to_invariant

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("algorithm", "pixel_noise", "rmse_ori_deg", "rmse_pos_m", "nees_pose", "n_diverged")


@dataclass
class MonteCarloRecord:
    """Per-epoch truth, estimate and pose covariance of one filter run.

    ``pose_cov`` is the 6x6 ``(theta, p)`` block in right-invariant
    coordinates whatever the filter convention; ``state_error`` is the
    right-invariant IMU error ``(theta, p, v, bg, ba)``.
    """

    run_id: int
    t: np.ndarray
    R_true: np.ndarray
    p_true: np.ndarray
    R_est: np.ndarray
    p_est: np.ndarray
    pose_cov: np.ndarray
    state_error: np.ndarray
    algorithm: str = ""
    seed: int = 0
    pixel_sigma: float = 1.0
    diverged: bool = False

    def __len__(self):
        return len(self.t)

    def pose_errors(self) -> np.ndarray:
        """``(E, 6)`` right-invariant pose errors ``(theta, p_tilde)``."""
        out = np.empty((len(self.t), 6))
        for k in range(len(self.t)):
            th = log_so3(self.R_true[k] @ self.R_est[k].T)
            out[k, :3] = th
            out[k, 3:] = self.p_true[k] - exp_so3(th) @ self.p_est[k]
        return out


@dataclass
class ObservabilityTrace:
    """Measurement Jacobians and transitions from the initial IMU error, per update.

    ``H[k] @ Phi[k]`` is the block row of the observability matrix at update
    ``k``; ``N0`` spans the expected unobservable directions at ``t0``.
    """

    N0: np.ndarray
    convention: str
    t: list = field(default_factory=list)
    H: list = field(default_factory=list)
    Phi: list = field(default_factory=list)
    constraint: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)


def _check(records):
    records = list(records)
    if not records:
        raise ValueError("no records")
    return records


def rmse(records) -> tuple:
    """``(orientation deg, position m)``: RMS over epochs, then mean over runs."""
    ori, pos = [], []
    for rec in _check(records):
        e = rec.pose_errors()
        ori.append(math.sqrt(np.mean(np.sum(e[:, :3] ** 2, axis=1))))
        pos.append(math.sqrt(np.mean(np.sum(e[:, 3:] ** 2, axis=1))))
    return math.degrees(float(np.mean(ori))), float(np.mean(pos))


def epoch_nees(errors: np.ndarray, covs: np.ndarray):
    """Per-epoch ``e^T P^-1 e``; singular covariances give NaN."""
    errors = np.atleast_2d(errors)
    covs = np.asarray(covs).reshape(-1, errors.shape[1], errors.shape[1])
    out = np.full(len(errors), np.nan)
    for k, (e, P) in enumerate(zip(errors, covs)):
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            continue
        y = np.linalg.solve(L, e)
        out[k] = y @ y
    return out


def nees_details(records) -> dict:
    """Pooled and run-averaged pose NEES plus the count of skipped epochs."""
    per_run, pooled = [], []
    for rec in _check(records):
        eps = epoch_nees(rec.pose_errors(), rec.pose_cov)
        good = eps[np.isfinite(eps)]
        pooled.append(good)
        if len(good):
            per_run.append(good.mean())
    allv = np.concatenate(pooled)
    skipped = int(sum(len(r) for r in records) - len(allv))
    if skipped:
        logger.warning("skipped %d epochs with singular pose covariance", skipped)
    return {
        "pooled": float(allv.mean()) if len(allv) else math.nan,
        "run_mean": float(np.mean(per_run)) if per_run else math.nan,
        "skipped": skipped,
    }


def nees(records) -> float:
    """Pose NEES pooled over every epoch of every run."""
    return nees_details(records)["pooled"]


def nullspace_basis(imu0: ImuState = None, convention: str = "invariant") -> np.ndarray:
    """15x4 basis of the unobservable directions of the initial IMU error.

    In right-invariant coordinates the columns are a rotation about gravity and
    the three global translations, independent of the estimate. The
    classical-coordinate basis depends on ``imu0``.
    """
    N = np.zeros((IMU_DIM, 4))
    N[0:3, 0] = -GRAVITY / np.linalg.norm(GRAVITY)
    N[3:6, 1:4] = np.eye(3)
    if convention == CLASSICAL:
        if imu0 is None:
            raise ValueError("classical basis needs the initial estimate")
        N = (2.0 * np.eye(IMU_DIM) - imu_classical_to_invariant(imu0)) @ N
    return N


def observability_nullspace_residual(trace: ObservabilityTrace) -> np.ndarray:
    """``|O_k N| / |O_k|`` (Frobenius) per recorded update."""
    out = np.empty(len(trace))
    for k, (H, Phi) in enumerate(zip(trace.H, trace.Phi)):
        O = H @ Phi
        norm = np.linalg.norm(O)
        out[k] = np.linalg.norm(O @ trace.N0) / norm if norm > 0 else 0.0
    return out


def clone_sum_constraint(H: np.ndarray, n_clones: int) -> float:
    """Relative size of the summed rotation and position blocks over clones."""
    blocks = H[:, IMU_DIM : IMU_DIM + 6 * n_clones].reshape(H.shape[0], n_clones, 6).sum(axis=1)
    scale = np.linalg.norm(H)
    return float(np.linalg.norm(blocks) / scale) if scale > 0 else 0.0


def summarize(records, algorithm: str, pixel_noise: float) -> dict:
    """One summary row; diverged runs are counted and left out of the metrics."""
    records = _check(records)
    ok = [r for r in records if not r.diverged]
    n_div = len(records) - len(ok)
    if ok:
        ori, pos = rmse(ok)
        ne = nees(ok)
    else:
        ori = pos = ne = math.nan
    return {
        "algorithm": algorithm,
        "pixel_noise": pixel_noise,
        "rmse_ori_deg": ori,
        "rmse_pos_m": pos,
        "nees_pose": ne,
        "n_diverged": n_div,
    }


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_summary(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])


def read_summary(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for c in ("pixel_noise", "rmse_ori_deg", "rmse_pos_m", "nees_pose"):
            row[c] = float(row[c])
        row["n_diverged"] = int(row["n_diverged"])
    return rows
