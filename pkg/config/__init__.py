"""
Configuration settings for ufcl-core.

Config holds the published defaults as class attributes. PipelineConfig and
SynthConfig are the per-run settings; both are read from one flat key=value
file (parsed with python-dotenv) with `key=value` overrides applied on top.
Environment variables are never consulted, so a run is fully described by its
config file.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from dotenv import dotenv_values

from core.clustering import ClusteringMethod
from core.errors import ConfigError
from core.membank import WeightKind, WeightScheme, WeightSign
from core.neighbors import DistanceKind
from models.encoder import EncoderSpec, Pooling

logger = logging.getLogger(__name__)


class Config:
    """Published defaults of the clustering-learning loop."""

    # Training schedule
    EPOCHS = 50
    ITERATIONS_PER_EPOCH = 50
    BATCH_SIZE = 256
    INSTANCES_PER_CLASS = 4

    # Adam
    LEARNING_RATE = 0.00035
    WEIGHT_DECAY = 5e-4

    # Memory bank / loss
    MOMENTUM = 0.1
    LOSS_TEMPERATURE = 0.05

    # Weighted k-NN evaluation
    EVAL_K = 5
    EVAL_TEMPERATURE = 0.07

    # Clustering
    MIN_CLUSTER_SIZE = 5
    DBSCAN_EPS = 0.4
    DBSCAN_MIN_PTS = 4
    JACCARD_K = 30

    # Encoder
    OUTPUT_DIM = 32
    GEM_INIT = 3.0

    # Synthetic benchmark
    SYNTH_CLASSES = 20
    SYNTH_PER_CLASS = 50
    SYNTH_INPUT_DIM = 64
    SYNTH_SEPARATION_DEGREES = 60.0
    SYNTH_SPREAD = 0.075
    SYNTH_TEST_PER_CLASS = 10

    CONFIG_FILENAME = "config.txt"


@dataclass
class PipelineConfig:
    """Settings of one training run."""

    epochs: int = Config.EPOCHS
    iterations_per_epoch: int = Config.ITERATIONS_PER_EPOCH
    batch_size: int = Config.BATCH_SIZE
    instances_per_class: int = Config.INSTANCES_PER_CLASS
    lr: float = Config.LEARNING_RATE
    weight_decay: float = Config.WEIGHT_DECAY
    momentum_m: float = Config.MOMENTUM
    loss_temperature: float = Config.LOSS_TEMPERATURE
    eval_k: int = Config.EVAL_K
    eval_temperature: float = Config.EVAL_TEMPERATURE
    clustering: ClusteringMethod = ClusteringMethod.HDBSCAN
    min_cluster_size: int = Config.MIN_CLUSTER_SIZE
    min_samples: int = 0  # 0 = same as min_cluster_size
    dbscan_eps: float = Config.DBSCAN_EPS
    dbscan_min_pts: int = Config.DBSCAN_MIN_PTS
    weight_scheme: WeightKind = WeightKind.MEAN
    weight_sign: WeightSign = WeightSign.AS_WRITTEN
    distance_kind: DistanceKind = DistanceKind.JACCARD
    jaccard_k: int = Config.JACCARD_K
    seed: int = 0
    output_dim: int = Config.OUTPUT_DIM
    hidden_dim: int = 0
    pooling: Pooling = Pooling.NONE
    tensor_width: int = 1
    tensor_height: int = 1
    gem_init: float = Config.GEM_INIT
    gem_shared: bool = False
    workers: int = 1
    checkpoint_every: int = 0

    def validate(self) -> "PipelineConfig":
        counts = {
            "iterations_per_epoch": self.iterations_per_epoch,
            "batch_size": self.batch_size,
            "instances_per_class": self.instances_per_class,
            "eval_k": self.eval_k,
            "dbscan_min_pts": self.dbscan_min_pts,
            "jaccard_k": self.jaccard_k,
            "output_dim": self.output_dim,
            "tensor_width": self.tensor_width,
            "tensor_height": self.tensor_height,
            "workers": self.workers,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        for name in ("epochs", "min_samples", "hidden_dim", "checkpoint_every", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.min_cluster_size < 2:
            raise ConfigError(f"min_cluster_size must be >= 2, got {self.min_cluster_size}")
        for name in ("lr", "loss_temperature", "eval_temperature", "dbscan_eps", "gem_init"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0.0 <= self.momentum_m <= 1.0:
            raise ConfigError(f"momentum_m must be in [0, 1], got {self.momentum_m}")
        return self

    @property
    def scheme(self) -> WeightScheme:
        return WeightScheme(kind=self.weight_scheme, sign=self.weight_sign)

    def encoder_spec(self, input_dim: int) -> EncoderSpec:
        return EncoderSpec(
            input_dim=input_dim,
            output_dim=self.output_dim,
            hidden_dim=self.hidden_dim,
            pooling=self.pooling,
            tensor_width=self.tensor_width,
            tensor_height=self.tensor_height,
            gem_shared=self.gem_shared,
        )


@dataclass
class SynthConfig:
    """Knobs of the synthetic benchmark used by `ufcl synth` and `ufcl pipeline`."""

    classes: int = Config.SYNTH_CLASSES
    per_class: int = Config.SYNTH_PER_CLASS
    input_dim: int = Config.SYNTH_INPUT_DIM
    separation_degrees: float = Config.SYNTH_SEPARATION_DEGREES
    spread: float = Config.SYNTH_SPREAD
    noise_frac: float = 0.0
    test_per_class: int = Config.SYNTH_TEST_PER_CLASS
    feature_maps: bool = False
    map_width: int = 4
    map_height: int = 4

    @property
    def separation(self) -> float:
        return math.radians(self.separation_degrees)


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_value(kind, raw: str):
    if kind is bool:
        return _parse_bool(raw)
    if kind is int:
        return int(raw.strip())
    if kind is float:
        return float(raw.strip())
    if isinstance(kind, type) and issubclass(kind, Enum):
        return kind(raw.strip().lower())
    return raw.strip()


def _format_value(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_overrides(pairs: Iterable[str]) -> dict[str, str]:
    """Turn ["key=value", ...] into a mapping; later pairs win."""
    result: dict[str, str] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Override must look like key=value, got {pair!r}")
        result[key.strip()] = value.strip()
    return result


def _build(cls, values: Mapping[str, str]):
    kwargs = {}
    types = {f.name: f.type for f in fields(cls)}
    for key, raw in values.items():
        if key not in types:
            continue
        try:
            kwargs[key] = _parse_value(types[key], raw)
        except ValueError as e:
            raise ConfigError(f"Invalid value for {key}: {raw!r} ({e})") from e
    return cls(**kwargs)


def load_configs(
    path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()
) -> tuple[PipelineConfig, SynthConfig]:
    """Read a key=value config file (optional) and apply overrides.

    Raises:
        ConfigError: unknown key, unparsable value or violated invariant
    """
    values: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        values.update({k: v for k, v in dotenv_values(path).items() if v is not None})
    values.update(parse_overrides(overrides))

    known = {f.name for f in fields(PipelineConfig)} | {f.name for f in fields(SynthConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

    pipeline = _build(PipelineConfig, values).validate()
    synth = _build(SynthConfig, values)
    logger.debug(f"Loaded config from {path or 'defaults'} with {len(values)} explicit keys")
    return pipeline, synth


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()
) -> PipelineConfig:
    return load_configs(path, overrides)[0]


def config_lines(*configs) -> list[str]:
    """key=value lines for the given config objects, in field order."""
    lines = []
    for config in configs:
        for key, value in asdict(config).items():
            lines.append(f"{key}={_format_value(value)}")
    return lines


__all__ = [
    "Config",
    "PipelineConfig",
    "SynthConfig",
    "load_config",
    "load_configs",
    "parse_overrides",
    "config_lines",
]
