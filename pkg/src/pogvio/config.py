"""Flat ``key = value`` experiment configuration.

Grammar: one assignment per line, ``#`` starts a comment, blank lines are
ignored, keys are case-insensitive. Booleans accept true/false/yes/no/1/0.
Every key can be overridden by an environment variable ``POGVIO_<KEY>``
(upper case), and selected keys by command-line flags; the precedence is
file < environment < flags.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .estimator import ALGORITHMS, FilterConfig
from .propagation import NoiseParams
from .simulator import SimConfig, TrajectoryParams

ENV_PREFIX = "POGVIO_"


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field name."""


@dataclass
class ExperimentConfig:
    algorithm: str = "poseonly-multi"
    window_size: int = 10
    gnss_enabled: bool = False
    n_runs: int = 1
    output_dir: str = "out"
    base_seed: int = 0
    # simulation
    duration: float = 200.0
    imu_rate: int = 100
    cam_rate: int = 10
    gnss_rate: int = 1
    pixel_sigma: float = 1.0
    focal: float = 460.0
    n_landmarks: int = 300
    landmark_seed: int = 12345
    sigma_g: float = 3e-4
    sigma_a: float = 1e-3
    sigma_wg: float = 3e-5
    sigma_wa: float = 2e-4
    sigma_clock_rw: float = 0.05
    radius: float = 5.0
    period: float = 20.0
    height_amp: float = 1.0
    height_period: float = 7.0
    fov_deg: float = 90.0
    max_range: float = 40.0
    sigma_P: float = 1.0
    sigma_D: float = 0.1
    noiseless: bool = False
    # filter
    exact_init: bool = False
    use_doppler: bool = True
    max_base_age: int = 0
    n_jobs: int = 1
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: unknown value {self.algorithm!r}, expected one of {', '.join(ALGORITHMS)}")
        if self.n_runs < 1:
            raise ConfigError("n_runs: must be >= 1")
        if self.window_size < 2:
            raise ConfigError("window_size: must be >= 2")
        if self.gnss_enabled and self.gnss_rate < 1:
            raise ConfigError("gnss_rate: must be >= 1 when gnss_enabled")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs: must be >= 1")
        try:
            self.sim_config()
        except ValueError as exc:
            raise ConfigError(f"simulation: {exc}") from None

    def noise(self) -> NoiseParams:
        return NoiseParams(self.sigma_g, self.sigma_a, self.sigma_wg, self.sigma_wa, self.sigma_clock_rw)

    def sim_config(self, seed: int = None) -> SimConfig:
        cfg = SimConfig(
            duration=self.duration, imu_rate=self.imu_rate, cam_rate=self.cam_rate,
            gnss_rate=self.gnss_rate if self.gnss_enabled else 0,
            pixel_sigma=self.pixel_sigma, focal=self.focal, noise=self.noise(),
            n_landmarks=self.n_landmarks,
            trajectory=TrajectoryParams(self.radius, self.period, self.height_amp, self.height_period),
            seed=self.base_seed if seed is None else seed, landmark_seed=self.landmark_seed,
            fov_deg=self.fov_deg, max_range=self.max_range, sigma_P=self.sigma_P, sigma_D=self.sigma_D,
            init_sigma_bg=0.5 * self.sigma_g, init_sigma_ba=0.5 * self.sigma_a,
        )
        return cfg.noiseless() if self.noiseless else cfg

    def filter_config(self, record_trace: bool = False) -> FilterConfig:
        return FilterConfig(
            algorithm=self.algorithm, window_size=self.window_size, noise=self.noise(),
            pixel_sigma=self.pixel_sigma if self.pixel_sigma > 0 else 1.0, focal=self.focal,
            use_gnss=self.gnss_enabled, use_doppler=self.use_doppler,
            max_base_age=self.max_base_age or None, record_trace=record_trace,
            exact_init=self.exact_init,
            init_sigma_bg=0.5 * self.sigma_g, init_sigma_ba=0.5 * self.sigma_a,
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "extra"}


_FIELDS = {f.name.lower(): f for f in dataclasses.fields(ExperimentConfig) if f.name != "extra"}


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool or kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse the flat grammar into ``{field: typed value}``."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value' in {source}")
        key, raw = (s.strip() for s in line.split("=", 1))
        f = _FIELDS.get(key.lower())
        if f is None:
            raise ConfigError(f"{key}: unknown configuration key ({source}, line {lineno})")
        values[f.name] = _coerce(f.name, raw, f.type)
    return values


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    values = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        f = _FIELDS.get(name)
        if f is None:
            raise ConfigError(f"{name}: unknown configuration key (from {key})")
        values[f.name] = _coerce(f.name, raw, f.type)
    return values


def load_config(path=None, overrides: dict = None, environ=None) -> ExperimentConfig:
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
        values.update(parse_text(text, str(path)))
    values.update(env_overrides(environ))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(**values)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in cfg.as_dict().items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
