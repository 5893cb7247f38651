"""Experiment configuration: plain `key = value` text with dotted sections.

Every module's settings live in one frozen dataclass tree; parsing rejects
unknown keys, coerces values from the declared field types and runs each
dataclass's own invariant checks.  `parse_config(serialize_config(cfg))`
reproduces `cfg` exactly.
"""

from __future__ import annotations

import math
import typing
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .actors import ACTOR_KINDS, JointMap
from .cpg import CpgInitConfig, CpgTopology
from .errors import ConfigError, ContractViolationError
from .feedback import FeedbackConfig
from .hopper import HopperConfig, RewardConfig
from .ppo import PpoConfig


@dataclass(frozen=True)
class CpgSettings:
    n_oscillators: int = 2
    d_cmd: int = 1
    dt: float = 0.01
    command: float = 1.0
    d_max: float = 2.0
    init_freq_hz: float = 1.5
    init_amp: float = 0.4
    init_a: float = 5.0
    slope_std: float = 0.1
    coupling_std: float = 0.1
    zero_coupling: bool = False

    def __post_init__(self):
        if self.n_oscillators < 1:
            raise ContractViolationError("cpg.n_oscillators must be >= 1")
        if self.dt <= 0:
            raise ContractViolationError("cpg.dt must be > 0")
        if not 0.0 <= self.command <= self.d_max:
            raise ContractViolationError("cpg.command must lie in [0, cpg.d_max]")

    def topology(self) -> CpgTopology:
        n = self.n_oscillators
        adj = np.ones((n, n), dtype=np.int64) - np.eye(n, dtype=np.int64)
        return CpgTopology(n, adj, d_cmd=self.d_cmd)

    def init_config(self) -> CpgInitConfig:
        return CpgInitConfig(
            freq_at_ref=self.init_freq_hz, amp_at_ref=self.init_amp,
            a_value=self.init_a, slope_std=self.slope_std,
            coupling_std=self.coupling_std, zero_coupling=self.zero_coupling,
            ref_cmd=self.command)


@dataclass(frozen=True)
class JointSettings:
    offsets: tuple[float, ...] = (-0.2, 0.6)
    ranges: tuple[float, ...] = (0.6, 0.9)

    def __post_init__(self):
        if len(self.offsets) != 2 or len(self.ranges) != 2:
            raise ContractViolationError("joints.offsets and joints.ranges need 2 entries")
        if any(r <= 0 for r in self.ranges):
            raise ContractViolationError("joints.ranges must be positive")


@dataclass(frozen=True)
class WarmStartSettings:
    enabled: bool = True
    epochs: int = 100
    lr: float = 0.02
    minibatch: int = 128
    obs_batch: int = 1024
    freq_hz: float = 1.5
    amp: float = 0.4
    coupling: float = 0.5
    phase: float = math.pi
    a_value: float = 5.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ContractViolationError("warmstart.epochs must be >= 0")
        if self.lr <= 0 or self.minibatch < 1 or self.obs_batch < 1:
            raise ContractViolationError("warmstart.lr/minibatch/obs_batch must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    actor: str = "cpg-actor"
    seeds: tuple[int, ...] = (0,)
    total_steps: int = 2_000_000
    out_dir: str = "runs/hopper"
    checkpoint_every: int = 0   # updates between checkpoints; 0 = auto
    cpg: CpgSettings = field(default_factory=CpgSettings)
    joints: JointSettings = field(default_factory=JointSettings)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    hopper: HopperConfig = field(default_factory=HopperConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    warmstart: WarmStartSettings = field(default_factory=WarmStartSettings)

    def __post_init__(self):
        if self.actor not in ACTOR_KINDS:
            raise ContractViolationError(
                f"actor must be one of {ACTOR_KINDS}, got '{self.actor}'")
        if self.total_steps < 0 or not self.seeds:
            raise ContractViolationError("total_steps must be >= 0 and seeds non-empty")

    def joint_map(self) -> JointMap:
        return JointMap(tuple(self.joints.offsets), tuple(self.joints.ranges))


_SECTIONS = {
    "cpg": CpgSettings,
    "joints": JointSettings,
    "feedback": FeedbackConfig,
    "hopper": HopperConfig,
    "reward": RewardConfig,
    "ppo": PpoConfig,
    "warmstart": WarmStartSettings,
}


def _coerce(raw: str, typ, key: str):
    origin = typing.get_origin(typ)
    if origin is tuple:
        elem = typing.get_args(typ)[0]
        parts = [p.strip() for p in raw.split(",") if p.strip() != ""]
        return tuple(_coerce(p, elem, key) for p in parts)
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
    except ValueError:
        raise ConfigError(f"config key '{key}': cannot parse '{raw}' as {typ.__name__}")
    raise ConfigError(f"config key '{key}': unsupported field type {typ}")


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def parse_config(text: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """Build a configuration from text plus optional `key=value` overrides."""
    top_kwargs: dict = {}
    section_kwargs: dict[str, dict] = {name: {} for name in _SECTIONS}
    top_types = _field_types(ExperimentConfig)

    lines = list(text.splitlines())
    if overrides:
        lines += list(overrides)
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{stripped}'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if "." in key:
            section, _, name = key.partition(".")
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section '{section}' (key '{key}')")
            types = _field_types(_SECTIONS[section])
            if name not in types:
                raise ConfigError(
                    f"unknown config key '{key}'; section '{section}' has {sorted(types)}")
            section_kwargs[section][name] = _coerce(raw, types[name], key)
        else:
            if key not in top_types or key in _SECTIONS:
                known = [k for k in top_types if k not in _SECTIONS]
                raise ConfigError(f"unknown config key '{key}'; top level has {sorted(known)}")
            top_kwargs[key] = _coerce(raw, top_types[key], key)

    try:
        sections = {name: cls(**section_kwargs[name]) for name, cls in _SECTIONS.items()}
        return ExperimentConfig(**top_kwargs, **sections)
    except ContractViolationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str, overrides: list[str] | None = None) -> ExperimentConfig:
    with open(path) as f:
        return parse_config(f.read(), overrides)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parse_config(serialize_config(cfg)) == cfg."""
    out = []
    for f in fields(ExperimentConfig):
        if f.name in _SECTIONS:
            continue
        out.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    for section, cls in _SECTIONS.items():
        out.append("")
        sub = getattr(cfg, section)
        for f in fields(cls):
            out.append(f"{section}.{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(out) + "\n"


def with_updates(cfg: ExperimentConfig, **top_level) -> ExperimentConfig:
    return replace(cfg, **top_level)


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
