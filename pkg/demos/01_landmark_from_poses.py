"""
A landmark that is only a function of poses
===========================================

Three cameras look at one point. The depth in the first (base) camera follows
from a scalar least-squares problem, and the global point is then a
closed-form function of the camera poses and the raw observations.
"""

import numpy as np

from pogvio.landmark import build_linear_system, landmark_position, solve_depth, FeatureTrack, NormalizedObs
from pogvio.manifold import exp_so3
from pogvio.state import CameraClone

rng = np.random.default_rng(1)
point = np.array([0.4, -0.3, 6.0])

# cameras on a short baseline, all roughly facing +z
clones, obs = [], []
for i, eye in enumerate([[0.0, 0.0, 0.0], [0.5, 0.1, 0.0], [1.0, -0.1, 0.2]]):
    R = exp_so3(rng.normal(size=3) * 0.05)
    c = R.T @ (point - np.asarray(eye))
    clones.append(CameraClone(i, R, np.asarray(eye)))
    obs.append(NormalizedObs(i, c[:2] / c[2]))
track = FeatureTrack(0, 0, obs)

# every later view adds a 3-row block to A d = b
A, b = build_linear_system(track, clones)
d, cond = solve_depth(A, b)
print("A^T A  =", cond)
print("depth  =", d)

sol = landmark_position(track, clones)
print("point  =", sol.position_global, " (truth", point, ")")

# moving every camera by the same offset moves the point by that offset, so
# the position blocks of dg/dposes add up to the identity
blocks = sol.jac_poses.reshape(3, 3, 6)[:, :, 3:].sum(axis=1)
print("sum of position blocks:\n", np.round(blocks, 12))

# no parallax, no depth: a pure rotation is rejected
spin = [CameraClone(i, exp_so3([0, 0.05 * i, 0]), np.zeros(3)) for i in range(3)]
rays = [NormalizedObs(i, (c.R.T @ point)[:2] / (c.R.T @ point)[2]) for i, c in enumerate(spin)]
try:
    landmark_position(FeatureTrack(1, 0, rays), spin)
except ValueError as exc:
    print("pure rotation:", exc)
