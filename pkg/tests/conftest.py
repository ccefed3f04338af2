import numpy as np
import pytest

from pogvio.landmark import FeatureTrack, NormalizedObs
from pogvio.manifold import exp_so3
from pogvio.state import CameraClone


def random_rotation(rng, scale=np.pi):
    v = rng.normal(size=3)
    v *= rng.uniform(0, scale) / np.linalg.norm(v)
    return exp_so3(v)


def look_at(eye, target, rng):
    """Camera rotation whose optical (z) axis points from ``eye`` to ``target``, random roll."""
    z = target - eye
    z /= np.linalg.norm(z)
    a = rng.normal(size=3)
    x = a - z * (a @ z)
    x /= np.linalg.norm(x)
    return np.column_stack([x, np.cross(z, x), z])


def make_track(rng, n_obs, noise=0.0, baseline=1.0, point=None, fid=0, first_frame=0):
    """Clones around a point with real parallax, plus the matching track."""
    point = rng.uniform(-1, 1, 3) + np.array([0.0, 0.0, 8.0]) if point is None else point
    clones, obs = [], []
    for i in range(n_obs):
        eye = rng.normal(size=3) * baseline
        R = look_at(eye, point + rng.normal(size=3) * 0.3, rng)
        c = R.T @ (point - eye)
        frame = first_frame + i
        clones.append(CameraClone(frame, R, eye))
        obs.append(NormalizedObs(frame, c[:2] / c[2] + rng.normal(size=2) * noise))
    return FeatureTrack(fid, first_frame, obs), clones, point


def perturb_clones(clones, dx):
    """Apply a right-invariant (theta, p) perturbation per clone."""
    out = []
    for j, c in enumerate(clones):
        dR = exp_so3(dx[6 * j : 6 * j + 3])
        out.append(CameraClone(c.frame_id, dR @ c.R, dR @ c.p + dx[6 * j + 3 : 6 * j + 6]))
    return out


def perturb_track(track, dz):
    obs = [NormalizedObs(o.frame_id, o.xy + dz[2 * i : 2 * i + 2]) for i, o in enumerate(track.obs)]
    return FeatureTrack(track.feature_id, track.base_frame_id, obs)


def central_diff(f, x0, h=1e-6):
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for i in range(len(x0)):
        e = np.zeros_like(x0)
        e[i] = h
        cols.append((f(x0 + e) - f(x0 - e)) / (2 * h))
    return np.column_stack(cols)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
