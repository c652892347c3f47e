"""Simulated 4-bit block-float quantization.

Elements are rounded to the signed E2M1 table {0, 0.5, 1, 1.5, 2, 3, 4, 6},
sixteen consecutive last-axis values share one e4m3 (or 40-bit float) scale,
and an optional power-of-two per-tensor scale extends dynamic range. An
optional randomized Hadamard transform spreads outliers across each block
before coding. Everything runs in float64 so round-trips are exact and
reproducible; a compiled kernel backend and a numpy reference backend return
bitwise-identical results.
"""

from .backend import active_backend, get_kernels
from .codec import (
    QuantizedTensor,
    decode,
    encode,
    fake_quant,
    fake_quant_along,
    stochastic_round,
)
from .config import QuantConfig
from .hadamard import hadamard_transform, largest_pow2_divisor, rht_signs
from ._kernels_py import (
    E2M1_LEVELS,
    mix_key,
    project_e4m3,
    project_e4m3_ext,
    round_40bit,
    splitmix64,
    sr_uniform,
)

__all__ = [
    "E2M1_LEVELS",
    "QuantConfig",
    "QuantizedTensor",
    "active_backend",
    "decode",
    "encode",
    "fake_quant",
    "fake_quant_along",
    "get_kernels",
    "hadamard_transform",
    "largest_pow2_divisor",
    "mix_key",
    "project_e4m3",
    "project_e4m3_ext",
    "rht_signs",
    "round_40bit",
    "splitmix64",
    "sr_uniform",
    "stochastic_round",
]
