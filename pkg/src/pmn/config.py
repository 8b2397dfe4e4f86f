"""Run configuration (JSON on disk)."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .model import METRICS, VARIANTS, ModelConfig
from .signals import AugmentConfig

SEED_ENV = "PMN_SEED"


@dataclass
class DataConfig:
    """Where the data comes from: PMDS files, or the synthetic generator."""

    train_path: str | None = None
    test_path: str | None = None
    num_classes: int = 4
    per_class: int = 200
    split_ratio: float = 0.7

    def validate(self) -> None:
        if not 0 < self.split_ratio < 1:
            raise ConfigError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.per_class < 2:
            raise ConfigError(f"per_class must be >= 2, got {self.per_class}")


@dataclass
class RunConfig:
    seed: int = 0
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    lr_decay: float = 0.99
    loss_weights: tuple[float, float, float, float] = (1.0, 0.25, 0.25, 0.01)
    num_prototypes: int | None = None
    metric: str = "sqL2"
    variant: str = "pmn"
    dtype: str = "float32"
    augmentation: tuple[float, int, float] = (0.1, 100, 0.5)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if isinstance(self.data, dict):
            self.data = DataConfig(**self.data)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        aug = self.augmentation
        self.augmentation = (float(aug[0]), int(aug[1]), float(aug[2]) if len(aug) > 2 else 0.5)
        self.validate()

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("lr must be > 0 and lr_decay in (0, 1]")
        if len(self.loss_weights) != 4:
            raise ConfigError("loss_weights needs four values (recon, r1, r2, r3)")
        LossWeights.from_sequence(self.loss_weights)
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        self.augment_config()
        self.data.validate()

    @property
    def weights(self) -> LossWeights:
        return LossWeights.from_sequence(self.loss_weights)

    def augment_config(self) -> AugmentConfig:
        v, d, p = self.augmentation
        return AugmentConfig(v, d, p)

    def model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(num_classes=num_classes, num_prototypes=self.num_prototypes, metric=self.metric,
                           variant=self.variant, dtype=self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        d["augmentation"] = list(self.augmentation)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path=None, env=None) -> "RunConfig":
        """Read a JSON config (defaults when ``path`` is None); ``PMN_SEED`` overrides the seed."""
        d = json.loads(Path(path).read_text()) if path else {}
        env = os.environ if env is None else env
        if SEED_ENV in env:
            try:
                d["seed"] = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        return cls.from_dict(d)
