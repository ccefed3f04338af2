"""Sliding-window invariant EKF with pose-only landmark measurements.

Landmarks never enter the state: each one is a closed-form function of the
window poses and its raw observations. The package also ships a deterministic
visual-inertial(-GNSS) simulator and Monte Carlo consistency tools.
"""

__version__ = "0.1.0"

from .manifold import exp_so3, log_so3, skew, right_jacobian, boxplus, boxminus
from .state import WindowState, ImuState, CameraClone, ClockState, CameraExtrinsic
from .propagation import NoiseParams, propagate
from .landmark import FeatureTrack, NormalizedObs, landmark_position
from .vision import poseonly_update, msckf_update_baseline
from .features import TrackStore
from .gnss import gnss_update
from .simulator import SimConfig, generate, run_monte_carlo
from .estimator import FilterConfig, SlidingWindowFilter, run_filter, ALGORITHMS
from .consistency import rmse, nees, observability_nullspace_residual

__all__ = [
    "exp_so3", "log_so3", "skew", "right_jacobian", "boxplus", "boxminus",
    "WindowState", "ImuState", "CameraClone", "ClockState", "CameraExtrinsic",
    "NoiseParams", "propagate", "FeatureTrack", "NormalizedObs", "landmark_position",
    "poseonly_update", "msckf_update_baseline", "TrackStore", "gnss_update",
    "SimConfig", "generate", "run_monte_carlo", "FilterConfig", "SlidingWindowFilter",
    "run_filter", "ALGORITHMS", "rmse", "nees", "observability_nullspace_residual",
]
