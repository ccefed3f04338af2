"""Pseudorange and Doppler models against the window state.

Receiver clock terms are stored in metres (speed of light absorbed)::

    P = |p_sat - p_ant| + dt_r[constellation] - clock_bias_sat + eps_P
    D = (rho_dot + dt_r_dot - clock_drift_sat) / wavelength + eps_D

Tropospheric and ionospheric delays are not modelled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .manifold import skew
from .state import CLASSICAL, POS, THETA, VEL, WindowState, ekf_update

logger = logging.getLogger(__name__)

CONSTELLATIONS = ("GPS", "BDS", "GAL", "GLO")
GNSS_GATE = 0.99


class MissingClockError(ValueError):
    pass


@dataclass
class SatelliteEpoch:
    sat_id: int
    constellation: str
    pos: np.ndarray
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clock_bias: float = 0.0
    clock_drift: float = 0.0
    wavelength: float = 0.19029367

    def __post_init__(self):
        if self.constellation not in CONSTELLATIONS:
            raise ValueError(f"unknown constellation {self.constellation!r}")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        self.pos = np.asarray(self.pos, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)

    @property
    def system(self) -> int:
        return CONSTELLATIONS.index(self.constellation)


@dataclass
class GnssEpochMeasurement:
    sat: SatelliteEpoch
    pseudorange: float
    doppler: float
    sigma_P: float = 1.0
    sigma_D: float = 0.1

    def __post_init__(self):
        if not (self.sigma_P > 0 and self.sigma_D > 0):
            raise ValueError("measurement sigmas must be positive")


def _antenna(state: WindowState, lever_arm):
    imu = state.imu
    return imu.p + imu.R @ np.asarray(lever_arm, dtype=float)


def _to_convention(state: WindowState, H: np.ndarray) -> np.ndarray:
    if state.convention == CLASSICAL:
        H = H.copy()
        H[THETA] += H[POS] @ skew(state.imu.p) + H[VEL] @ skew(state.imu.v)
    return H


def pseudorange_residual(state: WindowState, m: GnssEpochMeasurement, lever_arm=np.zeros(3)):
    """Residual (m) and Jacobian row over the full error state."""
    if state.clock is None:
        raise MissingClockError("pseudorange update requires a clock state")
    p_ant = _antenna(state, lever_arm)
    diff = p_ant - m.sat.pos
    rho = float(np.linalg.norm(diff))
    los = diff / rho
    predicted = rho + state.clock.bias[m.sat.system] - m.sat.clock_bias
    H = np.zeros(state.dim)
    # p_ant = exp(theta) p_ant_hat + p_tilde under the invariant error
    H[POS] = los
    H[THETA] = -los @ skew(p_ant)
    H[state.clock_offset + m.sat.system] = 1.0
    return m.pseudorange - predicted, _to_convention(state, H)


def doppler_residual(state: WindowState, m: GnssEpochMeasurement, lever_arm=np.zeros(3),
                     omega=np.zeros(3)):
    """Residual (Hz) and Jacobian row; ``omega`` is the bias-free body rate for the lever arm."""
    if state.clock is None:
        raise MissingClockError("Doppler update requires a clock state")
    imu = state.imu
    lever_arm = np.asarray(lever_arm, dtype=float)
    p_ant = _antenna(state, lever_arm)
    v_ant = imu.v + imu.R @ np.cross(omega, lever_arm)
    diff = p_ant - m.sat.pos
    rho = float(np.linalg.norm(diff))
    los = diff / rho
    dv = v_ant - m.sat.vel
    lam = m.sat.wavelength
    predicted = (los @ dv + state.clock.drift - m.sat.clock_drift) / lam
    d_los = (dv - los * (los @ dv)) / rho  # d(rho_dot)/d(p_ant)
    H = np.zeros(state.dim)
    H[POS] = d_los / lam
    H[VEL] = los / lam
    H[THETA] = -(d_los @ skew(p_ant) + los @ skew(v_ant)) / lam
    H[state.clock_offset + 4] = 1.0 / lam
    return m.doppler - predicted, _to_convention(state, H)


def gnss_update(state: WindowState, epoch, lever_arm=np.zeros(3), omega=np.zeros(3),
                use_doppler: bool = True, gate=GNSS_GATE):
    """Stacked pseudorange/Doppler update with a per-measurement chi-square gate.

    Returns the updated state and the number of accepted scalar measurements.
    """
    if len(epoch) == 0:
        raise ValueError("empty GNSS epoch")
    rows, rs, var = [], [], []
    P = state.cov
    limit = chi2.ppf(gate, 1) if gate is not None else np.inf
    for m in epoch:
        cand = [(*pseudorange_residual(state, m, lever_arm), m.sigma_P**2)]
        if use_doppler:
            cand.append((*doppler_residual(state, m, lever_arm, omega), m.sigma_D**2))
        for r, H, s2 in cand:
            if r * r / (H @ P @ H + s2) > limit:
                continue
            rows.append(H)
            rs.append(r)
            var.append(s2)
    if not rows:
        logger.warning("all %d GNSS measurements gated out", len(epoch))
        return state, 0
    return ekf_update(state, np.array(rs), np.vstack(rows), np.array(var)), len(rows)
