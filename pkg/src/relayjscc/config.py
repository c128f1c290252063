"""Run configuration: one YAML file that fully determines a training run."""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import yaml

from .data import DATA_ENV, ImageSplits, ingest_cifar10, natural_splits, subset
from .errors import ConfigurationError
from .models import EncoderConfig
from .protocols import ProtocolSpec
from .training import TrainConfig


@dataclass
class DataConfig:
    source: str = "cifar10"  # "cifar10" or "natural"
    root: Optional[str] = None
    download: bool = False
    n_val: int = 5000
    # optional caps (seeded subsets); natural patches need all three
    n_train: Optional[int] = None
    n_test: Optional[int] = None

    def __post_init__(self):
        if self.source not in ("cifar10", "natural"):
            raise ConfigurationError(f"data.source: expected 'cifar10' or 'natural', got {self.source!r}")
        if self.source == "natural" and (self.n_train is None or self.n_test is None):
            raise ConfigurationError("data.n_train and data.n_test are required for natural patches")

    def load(self, seed: int) -> ImageSplits:
        if self.source == "natural":
            return natural_splits(self.n_train, self.n_val, self.n_test, seed=seed)
        root = self.root or os.environ.get(DATA_ENV)
        if not root:
            raise ConfigurationError(f"data.root: no dataset path given (set it or ${DATA_ENV})")
        splits = ingest_cifar10(root, download=self.download, n_val=self.n_val, seed=seed)
        splits.train = subset(splits.train, self.n_train, seed)
        splits.test = subset(splits.test, self.n_test, seed)
        return splits


@dataclass
class RunConfig:
    protocol: ProtocolSpec
    model: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs"
    seed: int = 0
    af_power: str = "block"

    def __post_init__(self):
        self.train.seed = self.seed

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        train.pop("seed")
        return {
            "protocol": self.protocol.to_dict(),
            "model": self.model.to_dict(),
            "train": train,
            "data": asdict(self.data),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "af_power": self.af_power,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config root must be a mapping")
        _reject_unknown("", d, {"protocol", "model", "train", "data", "output_dir", "seed", "af_power"})
        if "protocol" not in d:
            raise ConfigurationError("protocol: required field missing")
        proto = dict(d["protocol"])
        _reject_unknown("protocol.", proto, {"kind", "lambda"})
        model = _section("model", d.get("model", {}), EncoderConfig)
        train = _section("train", d.get("train", {}), TrainConfig, exclude={"seed"})
        data = _section("data", d.get("data", {}), DataConfig)
        try:
            spec = ProtocolSpec(kind=proto.get("kind"), lam=proto.get("lambda"))
        except ConfigurationError as exc:
            raise ConfigurationError(f"protocol: {exc}") from None
        return cls(protocol=spec, model=model, train=train, data=data,
                   output_dir=str(d.get("output_dir", "runs")), seed=int(d.get("seed", 0)),
                   af_power=d.get("af_power", "block"))


def _reject_unknown(prefix, d, allowed):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")


def _section(name, d, cls, exclude=()):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{name}: expected a mapping")
    allowed = {f.name for f in fields(cls)} - set(exclude)
    _reject_unknown(name + ".", d, allowed)
    d = dict(d)
    for key, value in d.items():
        if isinstance(value, str) and value.lower() in ("inf", "+inf"):
            d[key] = math.inf
    try:
        return cls(**d)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{name}: {exc}") from None
    except TypeError as exc:
        raise ConfigurationError(f"{name}: {exc}") from None


def load_config(path) -> RunConfig:
    with open(path) as f:
        return RunConfig.from_dict(yaml.safe_load(f) or {})


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def set_path(d: dict, dotted: str, value):
    """Assign ``value`` at ``a.b.c`` inside nested dict ``d``."""
    keys = dotted.split(".")
    for key in keys[:-1]:
        d = d.setdefault(key, {})
    d[keys[-1]] = value
