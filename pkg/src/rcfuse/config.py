"""Run configuration: one nested dataclass tree loadable from a YAML/JSON file
with dotted CLI overrides. Unknown keys are rejected; the config hash is
embedded in every output artifact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .model import ModelConfig
from .scene import ConfigurationError, SceneGenConfig
from .train import TrainConfig


@dataclass
class AblationConfig:
    modes: tuple = (
        "full_rc",
        "camera_one_stage",
        "camera_two_stage_ones_radar",
    )
    seeds: tuple = (0, 1, 2)
    warm_start_from_full: bool = True


@dataclass
class RunConfig:
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(value, target_type):
    if target_type is tuple and isinstance(value, list):
        return tuple(value)
    return value


def _update_dataclass(obj, data: dict, path: str = ""):
    valid = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in valid:
            raise ConfigurationError(f"unknown config key {path}{key!r}")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            _update_dataclass(current, value, path=f"{path}{key}.")
        else:
            if isinstance(value, list):
                value = tuple(value)
            setattr(obj, key, value)
    return obj


def load_config(path=None, overrides=None) -> RunConfig:
    """Build a RunConfig from defaults, an optional config file, and dotted
    `key.path=value` override strings."""
    cfg = RunConfig()
    if path:
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigurationError("config file must contain a mapping")
        _update_dataclass(cfg, data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override must be key.path=value: {item!r}")
        key_path, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = cfg
        parts = key_path.split(".")
        for p in parts[:-1]:
            if not hasattr(node, p):
                raise ConfigurationError(f"unknown config key {key_path!r}")
            node = getattr(node, p)
        leaf = parts[-1]
        if not is_dataclass(node) or leaf not in {f.name for f in fields(node)}:
            raise ConfigurationError(f"unknown config key {key_path!r}")
        if isinstance(value, list):
            value = tuple(value)
        setattr(node, leaf, value)
    return cfg
