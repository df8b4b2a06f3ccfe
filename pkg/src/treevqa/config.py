"""Model and training configuration with JSON loading and overrides.

Defaults are the full-scale settings: GloVe-sized word features (300),
POS features (128), biGRU hidden size 1024 per direction, 8 attention
heads, a 3-wide convolution window over subtrees capped at length 4,
2048-dim entity features, 1024-dim output entities, and 4 message-passing
steps. Tests and desk experiments override the dimensions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .embeddings import PTB_POS_TAGS, UD_DEPRELS

__all__ = ["ConfigError", "ModelConfig"]


class ConfigError(ValueError):
    """Invalid configuration value or file."""


@dataclass(frozen=True)
class ModelConfig:
    d_x: int = 300                 # word feature size
    d_t: int = 128                 # POS feature size
    d_h: int = 1024                # per-direction GRU hidden size
    num_heads: int = 8             # graph-attention heads
    conv_window: int = 3
    max_subtree_len: int = 4
    d_g: int | None = None         # conv channels; defaults to d_x + d_t
    d_v: int = 2048                # raw entity feature size
    d_out: int = 1024              # output entity feature size
    num_steps: int = 4             # message-passing steps T
    n_ans: int = 8
    base_lr: float = 1e-3
    peak_lr: float = 4e-3
    warmup_epochs: int = 4
    lr_decay: float = 0.5
    plateau_patience: int = 2
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.0
    k_min: int = 1                 # accepted entity-count bounds
    k_max: int = 100
    glove_path: str | None = None
    no_tree_conv: bool = False
    no_message_passing: bool = False
    no_fused_attention: bool = False
    pos_tags: tuple[str, ...] = PTB_POS_TAGS
    deprels: tuple[str, ...] = UD_DEPRELS

    @property
    def conv_channels(self) -> int:
        return self.d_g if self.d_g is not None else self.d_x + self.d_t

    @property
    def effective_steps(self) -> int:
        return 0 if self.no_message_passing else self.num_steps

    def validate(self) -> "ModelConfig":
        positive = {"d_x": self.d_x, "d_t": self.d_t, "d_h": self.d_h,
                    "num_heads": self.num_heads, "conv_window": self.conv_window,
                    "d_v": self.d_v, "d_out": self.d_out,
                    "epochs": self.epochs, "batch_size": self.batch_size,
                    "warmup_epochs": self.warmup_epochs,
                    "conv_channels": self.conv_channels}
        for name, value in positive.items():
            if value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.max_subtree_len < 2:
            raise ConfigError("max_subtree_len must be >= 2")
        if self.d_h % self.num_heads:
            raise ConfigError(f"d_h={self.d_h} not divisible by num_heads={self.num_heads}")
        if self.num_steps < 0:
            raise ConfigError("num_steps must be >= 0")
        if self.n_ans < 2:
            raise ConfigError("n_ans must be >= 2")
        if not (1 <= self.k_min <= self.k_max):
            raise ConfigError(f"bad entity-count bounds [{self.k_min}, {self.k_max}]")
        if self.val_fraction < 0 or self.test_fraction < 0 \
                or self.val_fraction + self.test_fraction >= 1:
            raise ConfigError("train fraction must stay positive")
        if not (0 < self.lr_decay <= 1):
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.base_lr <= 0 or self.peak_lr < self.base_lr:
            raise ConfigError("need 0 < base_lr <= peak_lr")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")
        return self

    def with_overrides(self, **kwargs) -> "ModelConfig":
        unknown = set(kwargs) - set(self.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return replace(self, **kwargs).validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pos_tags"] = list(self.pos_tags)
        d["deprels"] = list(self.deprels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("pos_tags", "deprels"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def load_json(cls, path) -> "ModelConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(raw)
