"""Run configuration: dataclasses, JSON loading with strict key checking."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

ALGORITHMS = ("maq-wp", "maq-pg", "il", "maddpg")
MANIFEST_KIND = "irslab-manifest"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class ChannelParams:
    pl0_db: float = 30.0
    kappa_bs_irs: float = 2.0
    kappa_irs_user: float = 2.8
    # not given for the direct link; see README
    kappa_bs_user: float = 3.5
    rician_bs_irs: float = 10.0
    rician_irs_user: float = 10.0
    noise_power_dbm: float = -80.0
    spacing_ratio: float = 0.5

    def validate(self):
        if self.rician_bs_irs < 0 or self.rician_irs_user < 0:
            raise ConfigError("channel.rician_*: Rician factors must be >= 0")
        for name in ("kappa_bs_irs", "kappa_irs_user", "kappa_bs_user"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"channel.{name}: path-loss exponent must be > 0")
        if self.spacing_ratio <= 0:
            raise ConfigError("channel.spacing_ratio: must be > 0")

    @property
    def noise_power_mw(self) -> float:
        return dbm_to_mw(self.noise_power_dbm)


@dataclass
class EnvConfig:
    num_irs: int = 2
    num_elements: int = 4
    num_users: int = 2
    num_antennas: int = 2
    p_max_dbm: float = 5.0
    resolutions: tuple = (3, 4, 5)
    power_per_element: dict = field(default_factory=lambda: {3: 1.5, 4: 4.5, 5: 6.0})
    e_min: float = 0.0
    e_max: float = 100.0
    e_init: float = 50.0
    slot_length: float = 1.0
    harvest_mean: float = 2.2
    harvest_unit: float = 1.0
    xi1: float = 1.0
    xi2: float = 1.0
    xi3: float = 1.0
    rate_req_low: float = 0.5
    rate_req_high: float = 1.5
    rate_req_const: Optional[float] = None
    bs_position: tuple = (0.0, 0.0)
    irs_radius: float = 100.0
    user_r_inner: float = 100.0
    user_r_outer: float = 120.0
    ref_distance: float = 100.0
    channel_hold: bool = False
    # "literal": E_l(t) - e_min (never negative after clamping);
    # "shortfall": penalize the pre-clamp depletion instead
    energy_penalty: str = "literal"

    def validate(self):
        for name in ("num_irs", "num_elements", "num_users", "num_antennas"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"env.{name}: must be >= 1")
        if not self.resolutions or any(b < 1 for b in self.resolutions):
            raise ConfigError("env.resolutions: need a non-empty list of bit counts >= 1")
        if list(self.resolutions) != sorted(set(self.resolutions)):
            raise ConfigError("env.resolutions: must be sorted and unique")
        for b in self.resolutions:
            if b not in self.power_per_element:
                raise ConfigError(f"env.power_per_element: missing entry for {b}-bit")
        if not self.e_min < self.e_max:
            raise ConfigError("env.e_min: must be < e_max")
        if not self.e_min <= self.e_init <= self.e_max:
            raise ConfigError("env.e_init: must lie in [e_min, e_max]")
        if min(self.xi1, self.xi2, self.xi3) < 0:
            raise ConfigError("env.xi*: trade-off coefficients must be >= 0")
        if self.harvest_mean < 0:
            raise ConfigError("env.harvest_mean: must be >= 0")
        if self.energy_penalty not in ("literal", "shortfall"):
            raise ConfigError("env.energy_penalty: expected 'literal' or 'shortfall'")
        if self.user_r_outer < self.user_r_inner:
            raise ConfigError("env.user_r_outer: must be >= user_r_inner")

    @property
    def p_max_mw(self) -> float:
        return dbm_to_mw(self.p_max_dbm)


@dataclass
class AgentConfig:
    hidden: tuple = (64, 64)
    mixer_hidden: int = 32
    lr_high: float = 1e-4
    lr_policy: float = 1e-4
    lr_low: float = 1e-4
    optimizer: str = "adam"
    gamma: float = 0.99
    batch_size: int = 128
    buffer_size: int = 100000
    warmup: int = 1000
    eps_start: float = 0.2
    eps_end: float = 0.02
    target_period: int = 200
    soft_tau: Optional[float] = None
    wolpertinger_k: int = 50
    knn_exhaustive_limit: int = 4096
    knn_wrap: bool = False
    exact_low_max_limit: int = 4096
    proto_noise: float = 0.1
    bs_noise: float = 0.1
    pg_baseline: bool = True
    log_std_init: float = -1.0
    estimator_every: int = 10
    grad_clip: float = 10.0
    normalize_reward: bool = True

    def validate(self):
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ConfigError("agent.hidden: need at least one hidden layer of width >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("agent.optimizer: expected 'adam' or 'sgd'")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("agent.gamma: must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ConfigError("agent.buffer_size: must be >= batch_size >= 1")
        if self.wolpertinger_k < 1:
            raise ConfigError("agent.wolpertinger_k: must be >= 1")
        if self.soft_tau is not None and not 0 <= self.soft_tau <= 1:
            raise ConfigError("agent.soft_tau: must lie in [0, 1]")


@dataclass
class RunConfig:
    algorithm: str = "maq-pg"
    epochs: int = 300
    steps: int = 50
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"algorithm: {self.algorithm!r} not recognized; valid: {', '.join(ALGORITHMS)}")
        if self.epochs < 1:
            raise ConfigError("epochs: must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps: must be >= 1")
        self.env.validate()
        self.channel.validate()
        self.agent.validate()
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["env"]["power_per_element"] = {
            str(k): v for k, v in self.env.power_per_element.items()}
        d["env"]["resolutions"] = list(self.env.resolutions)
        d["env"]["bs_position"] = list(self.env.bs_position)
        d["agent"]["hidden"] = list(self.agent.hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = _build(cls, data, "")
        return cfg.validate()


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


_NESTED = {"env": EnvConfig, "channel": ChannelParams, "agent": AgentConfig}
_TUPLES = {"resolutions", "bs_position", "hidden"}


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"{path}: unknown key")
        if cls is RunConfig and key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, f"{key}.")
            continue
        default = getattr(cls(), key)
        kwargs[key] = _coerce(path, key, value, default)
    try:
        return cls(**kwargs)
    except TypeError as exc:  # pragma: no cover - guarded by the key check
        raise ConfigError(str(exc)) from exc


def _coerce(path, key, value, default):
    if key in _TUPLES:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(value)
    if key == "power_per_element":
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object mapping bits to mW")
        try:
            return {int(k): float(v) for k, v in value.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if default is None:
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number or null")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(data, dict) and data.get("kind") == MANIFEST_KIND:
        data = data.get("config")
    return RunConfig.from_dict(data)


def dump_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
