"""Simulation configuration and its flat ``key = value`` file format."""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

SCHEMES = ("proposed", "gradient", "oracle", "one_tier")


@dataclass
class SimConfig:
    # network
    g: int = 3
    clusters_per_cell: int = 1
    k: int = 2
    n_t: int = 16
    n_r: int = 1
    m: int = 4
    inter_site_distance: float = 500.0
    pathloss_exponent: float = 2.6
    scatter_radius: float = 30.0
    angular_spread_deg: float = 20.0
    geometric_spread: bool = False
    quad_points: int = 4096
    # time structure
    superframe_len: int = 100
    n_superframes: int = 50
    subframe_duration: float = 1e-3
    carrier_hz: float = 2e9
    # operating points
    power_dbs: list = field(default_factory=lambda: [10.0])
    speeds_kmh: list = field(default_factory=lambda: [10.0])
    # algorithms
    w: float = 1.0
    gamma_policy: str = "auto"
    n_cg: int = 1
    cg_method: str = "hermitian"
    covariance_mode: str = "exact"
    latency_subframes: list = field(default_factory=lambda: [0, 5])
    schemes: list = field(default_factory=lambda: list(SCHEMES))
    # Monte Carlo
    seed: int = 0
    n_seeds: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def users_per_cell(self):
        return self.clusters_per_cell * self.k

    def validate(self):
        for name in ("g", "clusters_per_cell", "k", "n_t", "n_r", "m", "superframe_len", "n_cg", "quad_points"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.n_superframes < 0 or self.n_seeds < 1:
            raise ConfigError("n_superframes must be >= 0 and n_seeds >= 1")
        if self.m > self.n_t:
            raise ConfigError(f"m={self.m} exceeds n_t={self.n_t}")
        if self.m // self.users_per_cell < 1:
            raise ConfigError(f"m={self.m} cannot give one stream to each of {self.users_per_cell} users")
        if self.quad_points < 8 * self.n_t:
            raise ConfigError("quad_points must be at least 8 * n_t")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ConfigError(f"unknown schemes {unknown}; choose from {list(SCHEMES)}")
        if self.gamma_policy != "auto":
            try:
                if float(self.gamma_policy) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"gamma_policy must be 'auto' or a positive number, got {self.gamma_policy!r}") from None
        if self.cg_method not in ("hermitian", "normal"):
            raise ConfigError("cg_method must be 'hermitian' or 'normal'")
        if self.covariance_mode not in ("exact", "sampled"):
            raise ConfigError("covariance_mode must be 'exact' or 'sampled'")
        if any(lat < 0 for lat in self.latency_subframes):
            raise ConfigError("latencies must be nonnegative")
        if self.w < 0:
            raise ConfigError("w must be nonnegative")

    def step_size(self):
        return "auto" if self.gamma_policy == "auto" else float(self.gamma_policy)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_LIST_FIELDS = {"power_dbs": float, "speeds_kmh": float, "latency_subframes": int, "schemes": str}


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _convert(name, text, default):
    if name in _LIST_FIELDS:
        conv = _LIST_FIELDS[name]
        return [conv(x.strip()) for x in text.split(",") if x.strip()]
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text, base=None):
    """Parse ``key = value`` lines (``#`` starts a comment) into a SimConfig."""
    base = base or SimConfig()
    defaults = base.to_dict()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, value, defaults[key])
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    return dataclasses.replace(base, **values)


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config not found: {path}")
    return parse_config(path.read_text())


def dump_config(cfg):
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
