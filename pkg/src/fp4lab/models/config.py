"""Model and optimizer configuration.

The defaults are the desk-scale preset: a 4-layer, 256-wide transformer over
a byte vocabulary, small enough to train on one CPU core in minutes while
keeping the hidden dimension wide enough for correlation statistics.

Optimizer fields left as None resolve per architecture: the GPT baseline gets
weight decay and a linear sample-count warmup, the normalized model runs at
half the GPT learning rate with both removed. Passing a nonzero weight decay
or warmup for the normalized model is a configuration error, not a silent
override.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from ..errors import ConfigError
from ..fpquant import QuantConfig

ARCHES = ("gpt", "ngpt")

GPT_LR = 1.2e-3
NGPT_LR = 0.6e-3
GPT_WEIGHT_DECAY = 0.1
GPT_WARMUP_SAMPLES = 512


@dataclass(frozen=True)
class ModelConfig:
    """Everything that pins a model build and its training dynamics."""

    arch: str
    n_layers: int = 4
    d_model: int = 256
    n_heads: int = 4
    head_dim: int = 64
    ffn_dim: int = 768
    vocab_size: int = 256
    seq_len: int = 256
    quant: QuantConfig | None = None
    lr: float | None = None
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float | None = None
    warmup_samples: int | None = None
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHES:
            raise ConfigError(f"arch must be one of {ARCHES}, got {self.arch!r}")
        for name in ("n_layers", "d_model", "n_heads", "head_dim", "ffn_dim",
                     "vocab_size", "seq_len"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive int, got {v!r}")
        if self.d_model != self.n_heads * self.head_dim:
            raise ConfigError(
                f"d_model {self.d_model} != n_heads {self.n_heads} x "
                f"head_dim {self.head_dim}"
            )
        if self.head_dim % 2:
            raise ConfigError(
                f"head_dim must be even for rotary phases, got {self.head_dim}"
            )
        if self.quant is not None and not isinstance(self.quant, QuantConfig):
            raise ConfigError(f"quant must be a QuantConfig or None, got {self.quant!r}")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")

        if self.arch == "ngpt":
            if self.weight_decay not in (None, 0, 0.0):
                raise ConfigError(
                    "the normalized arch runs without weight decay; "
                    f"got weight_decay={self.weight_decay}"
                )
            if self.warmup_samples not in (None, 0):
                raise ConfigError(
                    "the normalized arch runs without LR warmup; "
                    f"got warmup_samples={self.warmup_samples}"
                )
            defaults = (NGPT_LR, 0.0, 0)
        else:
            defaults = (GPT_LR, GPT_WEIGHT_DECAY, GPT_WARMUP_SAMPLES)
        for name, dv in zip(("lr", "weight_decay", "warmup_samples"), defaults):
            if getattr(self, name) is None:
                object.__setattr__(self, name, dv)
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not isinstance(self.warmup_samples, int) or self.warmup_samples < 0:
            raise ConfigError(
                f"warmup_samples must be a non-negative int, got {self.warmup_samples!r}"
            )

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["betas"] = list(self.betas)
        d["quant"] = self.quant.to_dict() if self.quant is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        q = d.get("quant")
        if q is not None and not isinstance(q, QuantConfig):
            d["quant"] = QuantConfig.from_dict(q)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)
