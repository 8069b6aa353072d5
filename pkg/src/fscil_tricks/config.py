"""Experiment configuration: schema, defaults, YAML loading, overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from fscil_tricks.errors import ConfigError

TOGGLE_NAMES = ("supcon", "etf", "pseudo", "subnet_tuning", "pretraining", "rotation")


def _build(cls, data: Mapping[str, Any], path: str):
    """Construct a config dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)} (known: {sorted(known)})")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "toy"  # toy | folder | manifest
    path: str | None = None
    classes: int = 10
    train_per_class: int = 48
    test_per_class: int = 16
    image_size: int = 16
    noise: float = 0.1

    def __post_init__(self):
        if self.kind not in ("toy", "folder", "manifest"):
            raise ConfigError(f"dataset.kind must be toy|folder|manifest, got {self.kind!r}")
        if self.kind != "toy" and not self.path:
            raise ConfigError(f"dataset.kind={self.kind} requires dataset.path")


@dataclass(frozen=True)
class StreamConfig:
    base_classes: int = 6
    ways: int = 2
    shots: int = 5
    n_sessions: int = 2
    shuffle_classes: bool = False


@dataclass(frozen=True)
class EncoderConfig:
    arch: str = "toyconv"
    embedding_dim: int = 64


@dataclass(frozen=True)
class StageConfig:
    epochs: int = 50
    lr: float = 0.05
    batch_size: int = 64

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("lr must be positive and batch_size >= 1")


@dataclass(frozen=True)
class IncrementalConfig:
    epochs_per_session: int = 10
    lr: float | None = None  # default: base lr * 0.01

    def __post_init__(self):
        if self.epochs_per_session < 0:
            raise ConfigError("incremental epochs_per_session must be >= 0")


@dataclass(frozen=True)
class LossesConfig:
    temperature: float = 0.07
    supcon: float = 1.0
    etf: float = 1.0
    rotation: float = 0.5
    cross_entropy: float = 0.0
    selfsup: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("losses.temperature must be positive")
        for name in ("supcon", "etf", "rotation", "cross_entropy", "selfsup"):
            if getattr(self, name) < 0:
                raise ConfigError(f"losses.{name} must be non-negative")


@dataclass(frozen=True)
class PseudoConfig:
    multiplier: int = 2

    def __post_init__(self):
        if self.multiplier < 1:
            raise ConfigError("pseudo.multiplier must be >= 1")


@dataclass(frozen=True)
class EtfConfig:
    epoch_factor: float = 0.1

    def __post_init__(self):
        if not 0 <= self.epoch_factor < 1:
            raise ConfigError("etf.epoch_factor must be in [0, 1)")


@dataclass(frozen=True)
class SubnetConfig:
    retain_fraction: float = 0.9
    steps: int = 100
    lr: float = 0.1
    method: str = "score"

    def __post_init__(self):
        if not 0 < self.retain_fraction <= 1:
            raise ConfigError("subnet.retain_fraction must be in (0, 1]")
        if self.method not in ("score", "magnitude"):
            raise ConfigError("subnet.method must be score|magnitude")


@dataclass(frozen=True)
class TuningConfig:
    frozen_prefixes: tuple[str, ...] | None = None  # None: encoder default

    def __post_init__(self):
        if self.frozen_prefixes is not None:
            object.__setattr__(self, "frozen_prefixes", tuple(self.frozen_prefixes))


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale: tuple[float, float] = (0.7, 1.0)
    flip_prob: float = 0.5
    jitter: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "crop_scale", tuple(self.crop_scale))


@dataclass(frozen=True)
class Toggles:
    supcon: bool = True
    etf: bool = True
    pseudo: bool = True
    subnet_tuning: bool = True
    pretraining: bool = True
    rotation: bool = True

    def as_dict(self) -> dict[str, bool]:
        return {name: getattr(self, name) for name in TOGGLE_NAMES}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    threads: int = 1
    momentum: float = 0.9
    geometry_source: str = "test"  # embeddings used for distance reports: test | train
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    toggles: Toggles = field(default_factory=Toggles)
    pretrain: StageConfig = field(default_factory=lambda: StageConfig(epochs=20))
    base: StageConfig = field(default_factory=StageConfig)
    incremental: IncrementalConfig = field(default_factory=IncrementalConfig)
    losses: LossesConfig = field(default_factory=LossesConfig)
    pseudo: PseudoConfig = field(default_factory=PseudoConfig)
    etf: EtfConfig = field(default_factory=EtfConfig)
    subnet: SubnetConfig = field(default_factory=SubnetConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.momentum < 0 or self.momentum >= 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0 (0 leaves the torch default)")
        if self.geometry_source not in ("test", "train"):
            raise ConfigError("geometry_source must be test|train")
        if self.incremental_lr >= self.base.lr:
            raise ConfigError(
                f"incremental lr {self.incremental_lr} must be smaller than base lr {self.base.lr}"
            )

    @property
    def incremental_lr(self) -> float:
        return self.incremental.lr if self.incremental.lr is not None else self.base.lr * 0.01

    def with_toggles(self, **flags: bool) -> "ExperimentConfig":
        unknown = set(flags) - set(TOGGLE_NAMES)
        if unknown:
            raise ConfigError(f"unknown toggles {sorted(unknown)}")
        merged = {**self.toggles.as_dict(), **flags}
        return dataclasses.replace(self, toggles=Toggles(**merged))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        return _as_plain(dataclasses.asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


_SECTIONS = {
    "dataset": DatasetConfig,
    "stream": StreamConfig,
    "encoder": EncoderConfig,
    "toggles": Toggles,
    "pretrain": StageConfig,
    "base": StageConfig,
    "incremental": IncrementalConfig,
    "losses": LossesConfig,
    "pseudo": PseudoConfig,
    "etf": EtfConfig,
    "subnet": SubnetConfig,
    "tuning": TuningConfig,
    "augment": AugmentConfig,
}


def _as_plain(obj):
    if isinstance(obj, dict):
        return {k: _as_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_as_plain(v) for v in obj]
    return obj


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a mapping")
    known = {"seed", "threads", "momentum", "geometry_source", *_SECTIONS}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)} (known: {sorted(known)})")
    kwargs: dict[str, Any] = {}
    for key in ("seed", "threads", "momentum", "geometry_source"):
        if key in data:
            kwargs[key] = data[key]
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build(cls, data[name], name)
    return ExperimentConfig(**kwargs)


def default_config(**top_level: Any) -> ExperimentConfig:
    return config_from_dict(top_level)


def parse_override(spec: str) -> tuple[list[str], Any]:
    """Parse ``a.b.c=value`` into a key path and a YAML-typed value."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} must look like key.path=value")
    key, raw = spec.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {spec!r} has an empty key path")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {spec!r}: cannot parse value ({exc})") from exc
    return path, value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    out = json.loads(json.dumps(_as_plain(data)))  # deep copy as plain types
    for spec in overrides:
        path, value = parse_override(spec)
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {spec!r}: {part!r} is not a section")
        node[path[-1]] = value
    return out


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Load a YAML config file (or the defaults) and apply key=value overrides."""
    data: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: YAML parse error: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
        data = loaded
    if overrides:
        data = apply_overrides(data, list(overrides))
    return config_from_dict(data)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
