"""Quantizer configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

from ..errors import ConfigError
from ._kernels_py import E2M1_LEVELS

SCALE_FORMATS = ("e4m3", "float")
ROUNDING_MODES = ("nearest", "stochastic")


@dataclass(frozen=True)
class QuantConfig:
    """Everything that determines a fake-quantization pass.

    Attributes:
        block_size: elements per scaling block along the last axis.
        scale_format: 'e4m3' for the emulated-E4M3 scale grid, 'float' for
            near-exact (40-bit) scales.
        per_tensor_scale: divide by a global power-of-two scale chosen so the
            largest block scale lands at the top of the e4m3 grid.
        rounding: 'nearest' (ties to even) or 'stochastic'. Training applies
            the stochastic mode to gradient-GEMM operands only; forward GEMMs
            always round to nearest.
        rht_enabled: precondition with a randomized Hadamard transform before
            encoding and undo it after decoding.
        seed: pins the stochastic-rounding stream and the RHT sign diagonal.
        sr_nonce: extra stream key mixed into stochastic rounding only, so a
            training loop can redraw dither each step without touching the
            RHT signs. Leave 0 outside training loops.
        quantize_grads: quantize both operands of the two backward GEMMs as
            well as the forward GEMM.
        element_codebook: non-negative magnitude levels. The default E2M1
            table runs on the compiled kernels; any other table falls back to
            the (slow) generic numpy path and exists for tests.
    """

    block_size: int = 16
    scale_format: str = "e4m3"
    per_tensor_scale: bool = True
    rounding: str = "nearest"
    rht_enabled: bool = True
    seed: int = 0
    sr_nonce: int = 0
    quantize_grads: bool = True
    element_codebook: tuple = field(default=E2M1_LEVELS)

    def __post_init__(self):
        if not isinstance(self.block_size, int) or self.block_size < 1:
            raise ConfigError(f"block_size must be a positive int, got {self.block_size!r}")
        if self.scale_format not in SCALE_FORMATS:
            raise ConfigError(f"scale_format must be one of {SCALE_FORMATS}, got {self.scale_format!r}")
        if self.rounding not in ROUNDING_MODES:
            raise ConfigError(f"rounding must be one of {ROUNDING_MODES}, got {self.rounding!r}")
        cb = tuple(float(v) for v in self.element_codebook)
        if len(cb) < 2 or cb[0] != 0.0:
            raise ConfigError("element_codebook must start at 0.0 and hold at least two levels")
        if any(b <= a for a, b in zip(cb, cb[1:])):
            raise ConfigError("element_codebook levels must be strictly increasing")
        object.__setattr__(self, "element_codebook", cb)

    @property
    def default_codebook(self) -> bool:
        return self.element_codebook == E2M1_LEVELS

    def with_nonce(self, nonce: int) -> "QuantConfig":
        return replace(self, sr_nonce=nonce)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["element_codebook"] = list(self.element_codebook)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuantConfig":
        d = dict(d)
        if "element_codebook" in d:
            d["element_codebook"] = tuple(d["element_codebook"])
        return cls(**d)
