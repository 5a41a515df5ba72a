"""Run configuration: one JSON document with a fixed, nested key schema."""

import dataclasses
import json
from dataclasses import dataclass, field

from .data import RegressionConfig, SyntheticConfig
from .errors import ConfigError
from .frames import TransformConfig
from .trainer import TrainConfig


@dataclass
class ModelConfig:
    """Architecture sizes; channel count, length and scale count come from the data."""

    latent_dim: int = 64
    blocks: int = 2
    time_width: int = 16
    fourier_width: int = 8
    wavelet_width: int = 8
    kernel_size: int = 5
    dropout: float = 0.0
    proj_hidden: int = 64
    proj_dim: int = 64


@dataclass
class ProbeConfig:
    lr: float = 0.03
    epochs: int = 100
    standardize: bool = True
    parts: list = field(default_factory=lambda: ["t", "F", "W"])

    def validate(self):
        if not set(self.parts) <= {"t", "F", "W"} or not self.parts:
            raise ConfigError(f"probe parts must be a non-empty subset of t, F, W; got {self.parts}")
        if self.epochs < 1 or self.lr <= 0:
            raise ConfigError("probe needs epochs >= 1 and lr > 0")


@dataclass
class TheoryConfig:
    bins: int = 36
    max_samples: int = 200
    random_dim: int = 128
    random_samples: int = 1000
    levy_eps: float = 0.3
    dim: int = 16


@dataclass
class DataSection:
    kind: str = "classification"
    classification: SyntheticConfig = field(default_factory=SyntheticConfig)
    regression: RegressionConfig = field(default_factory=RegressionConfig)

    def active(self):
        if self.kind == "classification":
            return self.classification
        if self.kind == "regression":
            return self.regression
        raise ConfigError(f"data.kind must be 'classification' or 'regression', got {self.kind!r}")


@dataclass
class PathsConfig:
    dataset: str = None
    cache_dir: str = None
    out_dir: str = None


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    transform: TransformConfig = field(default_factory=TransformConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    theory: TheoryConfig = field(default_factory=TheoryConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self):
        self.data.active().validate()
        self.train.validate()
        self.probe.validate()
        if self.transform.num_scales < 8:
            raise ConfigError("the wavelet encoder needs at least 8 scales")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be an object, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        sub = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def parse_config(raw):
    """Build a validated :class:`RunConfig` from a dict; unknown keys are errors."""
    cfg = _build(RunConfig, raw, "")
    if "seed" in raw.get("train", {}) and cfg.train.seed != cfg.seed:
        raise ConfigError(f"train.seed ({cfg.train.seed}) conflicts with the global seed ({cfg.seed})")
    cfg.train.seed = cfg.seed
    return cfg.validate()


def load_config(path):
    if path is None:
        return parse_config({})
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)
