"""Run configuration: one JSON-serializable tree covering the model,
physics, observation, reward, training, evaluation, and bridge sections.

Loading is strict: unknown keys are rejected with their full dotted path
so a typo never silently falls back to a default. Saving echoes every
default, making the stored file a complete record of the run; the
canonical-JSON hash of that record is stamped into checkpoints and CSVs
so artifacts can be traced back to their exact configuration.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass

import numpy as np

from .rewards import RewardConfig
from .rl import TrainConfig
from .simcore import RobotModel, SimConfig


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


@dataclass
class ObsConfig:
    """Command-sampling ranges, also the clamp for operator commands."""

    vx_range: tuple = (-1.0, 1.0)
    h_range: tuple = (0.24, 0.32)

    def __post_init__(self):
        if self.vx_range[0] > self.vx_range[1] or self.h_range[0] > self.h_range[1]:
            raise ValueError("command ranges must be (low, high)")


@dataclass
class EvalConfig:
    scenario: str = "flat_steps"
    seed: int = 0
    controller_label: str = ""
    raw_masses: bool = False     # skip the planar mass-ratio payload scaling
    out_dir: str = "runs/eval"


@dataclass
class BridgeConfig:
    host: str = "127.0.0.1"
    port: int = 8787
    realtime_factor: float = 1.0  # 0 means fast-as-possible
    heartbeat_s: float = 1.0

    def __post_init__(self):
        if not 0 < self.port < 65536:
            raise ValueError("port must be in (0, 65536)")
        if self.realtime_factor < 0:
            raise ValueError("realtime_factor must be >= 0")
        if self.heartbeat_s <= 0:
            raise ValueError("heartbeat_s must be positive")


@dataclass
class RunConfig:
    model: RobotModel = dataclasses.field(default_factory=RobotModel)
    sim: SimConfig = dataclasses.field(default_factory=SimConfig)
    obs: ObsConfig = dataclasses.field(default_factory=ObsConfig)
    rewards: RewardConfig = dataclasses.field(default_factory=RewardConfig)
    rl: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)
    bridge: BridgeConfig = dataclasses.field(default_factory=BridgeConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, path="")

    def to_dict(self) -> dict:
        return _plain(self)


def _plain(value):
    """Recursive conversion to JSON-ready builtins; echoes every field."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _plain(getattr(value, f.name))
                for f in dataclasses.fields(value)}
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _field_default(f: dataclasses.Field):
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    if f.default is not dataclasses.MISSING:
        return f.default
    return None


def _build(cls, data, path: str, base=None):
    """Construct cls from a partial dict, filling gaps from the enclosing
    field's default so sections with non-trivial defaults merge right."""
    if not isinstance(data, dict):
        raise ConfigError(f"section {path or '<root>'} must be an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key: {where}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub_path = f"{path}.{f.name}" if path else f.name
        hint = hints.get(f.name)
        if f.name in data:
            sub = data[f.name]
            if dataclasses.is_dataclass(hint) and isinstance(sub, dict):
                sub_base = getattr(base, f.name) if base is not None else _field_default(f)
                kwargs[f.name] = _build(hint, sub, sub_path, base=sub_base)
            else:
                kwargs[f.name] = sub
        elif base is not None:
            kwargs[f.name] = getattr(base, f.name)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"invalid {path or 'config'}: {e}") from e


def config_hash(cfg) -> str:
    """sha256 of the canonical JSON echo; stable across runs and loads."""
    d = cfg.to_dict() if isinstance(cfg, RunConfig) else cfg
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return RunConfig.from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")
