"""Run configuration: nested dataclasses with a strict YAML round-trip.

Precedence when the CLI builds a run is command-line flag, then config file,
then the defaults below.
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .backbone import HEAD_NAMES, BackboneConfig, ModelConfig
from .data.samples import AugmentParams, StreamKind
from .data.synthetic import SyntheticSpec, even_groups
from .errors import ConfigError, ContractViolation, DataError
from .head import DropMaskSpec, LossWeights
from .train import TrainConfig

OUTPUT_ENV = "LCCSIGN_OUTPUT_DIR"

# fields of TrainConfig that RunConfig owns at the top level
_RUN_LEVEL = ("weights", "drop_mask", "stream", "seed")


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "runs")


@dataclass
class DataConfig:
    dataset: str | None = None  # directory with manifest.json; None generates synthetic data
    words: str | None = None  # word-vector file; None uses <dataset>/words.txt or the synthetic vectors
    allow_missing_words: bool = False
    graph: str | None = None  # YAML skeleton graph config; None uses the built-in layouts
    synthetic: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(concept_groups=even_groups(10, 5)))


@dataclass
class FusionConfig:
    heads: tuple[str, ...] = HEAD_NAMES

    def __post_init__(self):
        if "global" not in self.heads or not set(self.heads) <= set(HEAD_NAMES):
            raise ContractViolation(f"heads must include 'global' and be drawn from {HEAD_NAMES}, got {self.heads}")


@dataclass
class ModelOptions:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    extra_slots: int = 10
    variations: int = 3
    loss: str = "lcc"

    def __post_init__(self):
        if self.loss not in ("lcc", "ce"):
            raise ContractViolation(f"loss must be 'lcc' or 'ce', got {self.loss!r}")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelOptions = field(default_factory=ModelOptions)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    drop_mask: DropMaskSpec = field(default_factory=DropMaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    streams: tuple[str, ...] = ("joint",)
    output_dir: str = field(default_factory=default_output_dir)
    seed: int = 0

    def __post_init__(self):
        for s in self.streams:
            try:
                StreamKind.parse(s)
            except DataError as exc:
                raise ContractViolation(str(exc)) from None
        if not self.streams:
            raise ContractViolation("at least one stream is required")

    def model_config(self, num_classes: int) -> ModelConfig:
        m = self.model
        return ModelConfig(num_classes, m.backbone, m.extra_slots, m.variations, m.loss, tuple(self.fusion.heads))

    def train_config(self, stream: str) -> TrainConfig:
        return dataclasses.replace(self.train, weights=self.weights, drop_mask=self.drop_mask, stream=stream, seed=self.seed)

    def to_dict(self) -> dict:
        return encode(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        return decode(cls, data or {}, "")

    @classmethod
    def from_yaml(cls, text: str, source: str = "<config>") -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
            raise ConfigError(f"{where}: {getattr(exc, 'problem', None) or exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{source}: top level must be a mapping")
        try:
            return cls.from_dict(data)
        except ConfigError as exc:
            raise ConfigError(f"{source}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_yaml(text, str(path))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_yaml(), encoding="utf-8")


# ------------------------------------------------------------------ codec


def _skipped(obj_or_cls) -> tuple[str, ...]:
    cls = obj_or_cls if isinstance(obj_or_cls, type) else type(obj_or_cls)
    return _RUN_LEVEL if cls is TrainConfig else ()


def encode(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        skip = _skipped(obj)
        return {f.name: encode(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name not in skip}
    if isinstance(obj, (tuple, list)):
        return [encode(v) for v in obj]
    return obj


def _coerce(hint, value, path: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(a, value, path)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if errors else f"{path}: invalid value {value!r}")
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {value!r}")
        return decode(hint, value, path)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        if origin is tuple and len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if origin is tuple:
            if len(value) != len(args):
                raise ConfigError(f"{path}: expected {len(args)} values, got {len(value)}")
            return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
        return [_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {hint}")


def decode(cls, data: dict, path: str):
    hints = typing.get_type_hints(cls)
    skip = _skipped(cls)
    names = [f.name for f in dataclasses.fields(cls) if f.name not in skip]
    unknown = sorted(set(data) - set(names))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown field(s) {', '.join(where + k for k in unknown)}; allowed: {', '.join(names)}")
    kwargs = {}
    for name in names:
        if name in data:
            kwargs[name] = _coerce(hints[name], data[name], f"{path}.{name}" if path else name)
    try:
        return cls(**kwargs)
    except ContractViolation as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Set dotted ``section.field`` values (already typed) on a copy of ``cfg``."""
    data = cfg.to_dict()
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config section {key!r}")
            node = node[p]
        node[parts[-1]] = encode(value)
    return RunConfig.from_dict(data)


__all__ = [
    "OUTPUT_ENV",
    "AugmentParams",
    "DataConfig",
    "FusionConfig",
    "ModelOptions",
    "RunConfig",
    "apply_overrides",
    "default_output_dir",
]
