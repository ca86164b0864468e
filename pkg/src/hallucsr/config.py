"""Run configuration: every knob in one TOML-serializable tree.

The defaults describe the desk-scale smoke run (8 synthetic 32x32 images,
4x4 LR inputs), so an empty config file is a valid config.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .losses import LossWeights
from .nets import GeneratorConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str = ""  # empty: use synthetic images
    n_synthetic: int = 8
    # fraction >= 1 trains and evaluates on the whole set
    train_fraction: float = 1.0
    hflip: bool = False


@dataclass
class ExtractorConfig:
    stage_widths: list = field(default_factory=lambda: [32, 64, 128])
    weights_path: str = ""  # optional pretrained stages (.npz)


@dataclass
class OutputConfig:
    out_dir: str = "runs/desk"
    grid_z_count: int = 4
    grid_rows: int = 8
    eval_z_count: int = 8


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            return _build(cls, data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(tomli.loads(text))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_toml(path.read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml())

    def override(self, dotted: str, value) -> None:
        """Set ``section.key`` (or ``train.weights.key``) in place, re-validating."""
        data = self.to_dict()
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"unknown config section {dotted!r}")
            node = node[key]
        if leaf not in node or isinstance(node[leaf], dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node[leaf] = value
        new = RunConfig.from_dict(data)
        for f in fields(self):
            setattr(self, f.name, getattr(new, f.name))


_NESTED = {
    RunConfig: {"generator": GeneratorConfig, "train": TrainConfig, "data": DataConfig,
                "extractor": ExtractorConfig, "output": OutputConfig},
    TrainConfig: {"weights": LossWeights},
}


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a table for {cls.__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(cls, {}).get(key)
        if sub is not None:
            kwargs[key] = _build(sub, value)
        else:
            kwargs[key] = _coerce(known[key], value)
    return cls(**kwargs)


def _coerce(f, value):
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{f.name} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{f.name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{f.name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{f.name} must be a list")
        return list(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{f.name} must be a string")
    return value
