"""Run configuration: defaults, JSON parsing with key validation, overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .models import HEAD_VARIANTS, ConvConfig, CpcConfig
from .transforms import TransformSpec


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


OBJECTIVES = ("cpc", "simclr", "byol")
MODELS = ("cpc", "conv")


@dataclass
class RunConfig:
    objective: str = "cpc"
    model: str = "cpc"
    cpc: dict[str, Any] = field(default_factory=dict)
    conv: dict[str, Any] = field(default_factory=dict)
    head_variant: str = "full"
    head_hidden: int = 512
    head_dropout: float = 0.5
    transforms: list[Any] = field(default_factory=lambda: ["rrc", "to"])
    pretrain_crop_s: float | None = None
    crop_s: float = 2.5
    batch_size: int = 64
    epochs: int = 200
    lr: float = 1e-3
    weight_decay: float = 1e-3
    temperature: float = 0.5
    ema_tau: float = 0.99
    proj_hidden: int = 256
    proj_dim: int = 64
    step_reduction: str = "mean"
    linear_epochs: int = 50
    finetune_epochs: list[int] = field(default_factory=lambda: [50, 20])
    finetune_lr: float = 1e-3
    lr_factor: float = 10.0
    two_step: bool = True
    discriminative: bool = True
    train_folds: int = 8
    fold_counts: list[int] = field(default_factory=lambda: list(range(1, 9)))
    repeats: int = 3
    noise_levels: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    zscore: bool = False
    seed: int = 0
    data: dict[str, Any] = field(default_factory=lambda: {"synthetic": {}})

    def __post_init__(self):
        self.validate()

    @property
    def cpc_config(self) -> CpcConfig:
        return CpcConfig(**self.cpc)

    @property
    def conv_config(self) -> ConvConfig:
        return ConvConfig(**self.conv)

    @property
    def pretrain_crop(self) -> float:
        if self.pretrain_crop_s is not None:
            return self.pretrain_crop_s
        return 10.0 if self.objective == "cpc" else self.crop_s

    def pipeline(self) -> list[TransformSpec]:
        return [TransformSpec.parse(t) for t in self.transforms]

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError("objective", f"must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.model not in MODELS:
            raise ConfigError("model", f"must be one of {MODELS}, got {self.model!r}")
        if self.objective == "cpc" and self.model != "cpc":
            raise ConfigError("model", "the cpc objective needs model 'cpc'")
        for key, cls in (("cpc", CpcConfig), ("conv", ConvConfig)):
            try:
                cls(**getattr(self, key))
            except TypeError as e:
                raise ConfigError(key, str(e)) from e
            except ValueError as e:
                raise ConfigError(key, str(e)) from e
        if self.head_variant not in HEAD_VARIANTS:
            raise ConfigError("head_variant", f"must be one of {HEAD_VARIANTS}")
        try:
            self.pipeline()
        except (ValueError, TypeError) as e:
            raise ConfigError("transforms", str(e)) from e
        positive = ("crop_s", "batch_size", "epochs", "head_hidden", "temperature", "lr_factor", "repeats", "linear_epochs")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be positive")
        if self.pretrain_crop_s is not None and not self.pretrain_crop_s > 0:
            raise ConfigError("pretrain_crop_s", "must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size", "must be >= 2")
        if self.lr < 0 or self.finetune_lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr", "learning rates and weight decay must be >= 0")
        if not 0 <= self.head_dropout < 1:
            raise ConfigError("head_dropout", "must be in [0, 1)")
        if not 0 <= self.ema_tau <= 1:
            raise ConfigError("ema_tau", "must be in [0, 1]")
        if len(self.finetune_epochs) != 2 or min(self.finetune_epochs) < 0:
            raise ConfigError("finetune_epochs", "must be [head_epochs, full_epochs] with non-negative entries")
        if not 1 <= self.train_folds <= 8:
            raise ConfigError("train_folds", "must be in 1..8")
        if any(not 1 <= c <= 8 for c in self.fold_counts):
            raise ConfigError("fold_counts", "entries must be in 1..8")
        if any(not 1 <= n <= 6 for n in self.noise_levels):
            raise ConfigError("noise_levels", "entries must be in 1..6")
        if self.step_reduction not in ("mean", "sum"):
            raise ConfigError("step_reduction", "must be 'mean' or 'sum'")
        if not isinstance(self.data, dict) or not ({"dir", "synthetic"} & set(self.data)):
            raise ConfigError("data", "must contain 'dir' or 'synthetic'")

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise ConfigError(key, "unknown key")
        try:
            return cls(**obj)
        except TypeError as e:
            raise ConfigError("<root>", str(e)) from e

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError("--config", f"invalid JSON: {e}") from e
        return cls.from_dict(obj)

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Apply non-``None`` overrides (CLI flags win over file values)."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        for key in changes:
            if key not in {f.name for f in fields(self)}:
                raise ConfigError(key, "unknown key")
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
