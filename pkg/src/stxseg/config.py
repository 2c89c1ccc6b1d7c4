"""Run configuration: strict YAML schema, STX_ environment overrides.

Unknown keys are rejected (a typo in a loss weight must not silently run) and
the fully resolved configuration is persisted next to every command's outputs
so any run can be reproduced from its artifact directory alone.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .common import dataclass_from_dict
from .nets import ArchConfig
from .phantom import PhantomSpec
from .train import TrainConfig

ENV_PREFIX = "STX_"
RESOLVED_CONFIG_NAME = "resolved_config.yaml"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataPaths:
    source_manifest: str | None = None  # labeled source-domain training data
    target_manifest: str | None = None  # unlabeled target-domain training data
    eval_manifest: str | None = None  # labeled target-domain held-out data (evaluation only)
    target_size: int | None = None  # None -> native image size


@dataclass(frozen=True)
class AblationConfig:
    source_patients: int = 25
    source_slices: int = 4
    target_patients: int = 25
    target_slices: int = 4
    eval_patients: int = 10
    eval_slices: int = 5
    master_seeds: tuple[int, ...] = (0, 1, 2)
    joint_noshape: bool = False  # train S jointly during the no-shape GAN instead of afterward


@dataclass(frozen=True)
class RunConfig:
    out_dir: str = "runs/out"
    seed: int = 0
    deterministic: bool = True
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    arch: ArchConfig = field(default_factory=lambda: ArchConfig(image_size=128))
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataPaths = field(default_factory=DataPaths)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def resolved(self) -> "RunConfig":
        """Propagate top-level seed/deterministic into the training config."""
        train = dataclasses.replace(self.train, seed=self.seed, deterministic=self.deterministic)
        return dataclasses.replace(self, train=train)


def _parse_env_value(raw: str):
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def env_overrides(environ=None) -> dict:
    """Collect STX_SECTION__FIELD=value overrides into a nested dict.

    Top-level scalars use a single segment (STX_SEED=3); nested fields use a
    double underscore (STX_TRAIN__LR_GAN=2e-4). Values parse as YAML scalars.
    """
    environ = os.environ if environ is None else environ
    overrides: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = [seg.lower() for seg in key[len(ENV_PREFIX) :].split("__") if seg]
        if not path:
            continue
        node = overrides
        for seg in path[:-1]:
            node = node.setdefault(seg, {})
            if not isinstance(node, dict):
                raise ConfigError(f"environment override {key} conflicts with a scalar override")
        node[path[-1]] = _parse_env_value(raw)
    return overrides


def _deep_merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Path | str | None, overrides: dict | None = None, apply_env: bool = True) -> RunConfig:
    """Load a RunConfig from YAML, then apply env and explicit overrides."""
    payload: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        payload = loaded
    if apply_env:
        payload = _deep_merge(payload, env_overrides())
    if overrides:
        payload = _deep_merge(payload, overrides)
    try:
        cfg = dataclass_from_dict(RunConfig, payload, "config")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.resolved()


def config_to_dict(cfg: RunConfig) -> dict:
    def _plain(value):
        if dataclasses.is_dataclass(value):
            return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [_plain(v) for v in value]
        if isinstance(value, (list, dict, str, int, float, bool)) or value is None:
            return value
        return str(value)

    return _plain(cfg)


def write_resolved_config(cfg: RunConfig, out_dir: Path | str) -> Path:
    """Materialize every default into a YAML file next to the run's outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_CONFIG_NAME
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))
    return path
