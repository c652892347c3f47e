"""Block-float encode/decode orchestration.

The heavy per-block loops live in the kernel backends (``_kernels_py`` or the
compiled twin); this module handles validation, padding, scale-mode
selection, per-tensor scale factoring, the randomized Hadamard wrapper, and
the public ``QuantizedTensor`` container.

Per-tensor scaling
------------------
With ``per_tensor_scale`` enabled (e4m3 scale format), block scales are
projected onto the unbounded 3-bit-mantissa grid and factored as

    composed_scale = stored_block_scale * tensor_scale

where ``tensor_scale`` is the smallest power of two putting the largest
stored scale in (224, 448], and smaller scales are floored at stored value
2**-6 (the smallest normal e4m3). Every stored scale is then an exact normal
e4m3 value, giving the tensor about 14.8 octaves of cross-block dynamic
range anchored at its own maximum. The tensor scale is a pure function of
the largest composed scale, which re-encoding reproduces exactly, so
fake-quant is idempotent with no boundary cases. Without the tensor scale,
block scales are clamped to the bounded grid [2**-7, 448] and out-of-range
tensors saturate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backend import get_kernels
from .config import QuantConfig
from .hadamard import hadamard_transform
from ._kernels_py import (
    SCALE_E4M3,
    SCALE_E4M3_EXT,
    SCALE_FLOAT40,
    mix_key,
)
from . import _kernels_py

# Smallest normal e4m3 value; per-tensor stored block scales are floored
# here so each stays exactly representable in the scale format.
_STORED_SCALE_MIN = 2.0 ** -6


def _validate(t: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(t, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    finite = np.isfinite(arr)
    if not finite.all():
        flat = int(np.argmin(finite.ravel()))
        bad = arr.ravel()[flat]
        raise ValueError(f"non-finite value {bad!r} at flat index {flat}")
    return arr


def _pad_last_axis(arr: np.ndarray, block_size: int) -> tuple[np.ndarray, int]:
    """Zero-pad the last axis up to a block multiple; returns (padded, pad)."""
    n = arr.shape[-1]
    pad = (-n) % block_size
    if pad:
        widths = [(0, 0)] * (arr.ndim - 1) + [(0, pad)]
        arr = np.pad(arr, widths)
    return arr, pad


def _min_pow2_at_least(ratio_num: float, ratio_den: float) -> float:
    """Smallest power of two p with ratio_den * p >= ratio_num (both > 0)."""
    m, e = math.frexp(ratio_num / ratio_den)
    p = math.ldexp(1.0, e - 1 if m == 0.5 else e)
    while ratio_den * p < ratio_num:
        p *= 2.0
    while p > 5e-324 and ratio_den * (p * 0.5) >= ratio_num:
        p *= 0.5
    return p


@dataclass(frozen=True)
class QuantizedTensor:
    """Encoded tensor: signed level indices plus factored scales.

    ``codes`` has the padded block layout (nblocks, block_size);
    ``block_scales`` is per block. ``tensor_scale`` is None when per-tensor
    scaling is disabled, otherwise a power of two (1.0 for float-format
    scales, which need no range management).
    """

    shape: tuple[int, ...]
    codes: np.ndarray
    block_scales: np.ndarray
    tensor_scale: float | None
    config: QuantConfig

    def decode(self) -> np.ndarray:
        return decode(self)


def encode(t: np.ndarray, cfg: QuantConfig) -> QuantizedTensor:
    """Quantize a tensor blockwise along its last axis."""
    return _encode_validated(_validate(t), cfg)


def _encode_validated(arr: np.ndarray, cfg: QuantConfig) -> QuantizedTensor:
    shape = arr.shape
    padded, _ = _pad_last_axis(arr, cfg.block_size)
    blocks = padded.reshape(-1, cfg.block_size)

    default_table = cfg.default_codebook
    kern = get_kernels() if default_table else _kernels_py

    if cfg.scale_format == "e4m3":
        mode = SCALE_E4M3_EXT if cfg.per_tensor_scale else SCALE_E4M3
    else:
        mode = SCALE_FLOAT40

    key = mix_key(cfg.seed, cfg.sr_nonce)
    stochastic = cfg.rounding == "stochastic"
    if default_table:
        codes, scales = kern.encode_blocks(blocks, mode, stochastic, key)
    else:
        levels = np.asarray(cfg.element_codebook, dtype=np.float64)
        codes, scales = _kernels_py.encode_blocks(blocks, mode, stochastic, key, levels=levels)

    tensor_scale: float | None
    if cfg.per_tensor_scale:
        if cfg.scale_format == "e4m3":
            smax = float(scales.max())
            if smax > 0.0:
                tensor_scale = _min_pow2_at_least(smax, 448.0)
                floor = tensor_scale * _STORED_SCALE_MIN
                lifted = (scales > 0.0) & (scales < floor)
                if lifted.any():
                    rows = np.flatnonzero(lifted)
                    scales[rows] = floor
                    sub = np.ascontiguousarray(blocks[rows])
                    if default_table:
                        codes[rows] = kern.encode_with_scales(
                            sub, scales[rows], stochastic, key, rows.astype(np.int64)
                        )
                    else:
                        codes[rows] = _kernels_py.encode_with_scales(
                            sub, scales[rows], stochastic, key,
                            levels=levels, row_origin=rows.astype(np.int64),
                        )
            else:
                tensor_scale = 1.0
        else:
            tensor_scale = 1.0
        stored = scales / tensor_scale
    else:
        tensor_scale = None
        stored = scales

    return QuantizedTensor(
        shape=shape,
        codes=codes,
        block_scales=stored,
        tensor_scale=tensor_scale,
        config=cfg,
    )


def decode(q: QuantizedTensor) -> np.ndarray:
    """Reconstruct float64 values from a ``QuantizedTensor``."""
    ts = 1.0 if q.tensor_scale is None else q.tensor_scale
    if q.config.default_codebook:
        vals = get_kernels().decode_blocks(q.codes, q.block_scales, ts)
    else:
        levels = np.asarray(q.config.element_codebook, dtype=np.float64)
        mags = levels[np.abs(q.codes)]
        vals = np.copysign(mags, q.codes.astype(np.float64, copy=False))
        vals = vals * q.block_scales[:, None]
        if ts != 1.0:
            vals = vals * ts

    lead = q.shape[:-1]
    lead_n = int(np.prod(lead)) if lead else 1
    padded_last = q.codes.size // lead_n
    vals = vals.reshape(lead + (padded_last,))
    if padded_last != q.shape[-1]:
        vals = vals[..., : q.shape[-1]]
    return np.ascontiguousarray(vals)


def fake_quant(t: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    """Round-trip a tensor through the codec (optionally inside the RHT basis).

    This is the simulation workhorse: the result has the exact values a
    4-bit tensor-core operand would carry, in float64 storage.
    """
    arr = _validate(t)
    if cfg.rht_enabled:
        arr = hadamard_transform(arr, cfg.seed)
    out = decode(_encode_validated(arr, cfg))
    if cfg.rht_enabled:
        out = hadamard_transform(out, cfg.seed, inverse=True)
    return out


def fake_quant_along(t: np.ndarray, cfg: QuantConfig, axis: int) -> np.ndarray:
    """``fake_quant`` with blocks (and RHT segments) along ``axis``."""
    axis = axis % t.ndim
    if axis == t.ndim - 1:
        return fake_quant(t, cfg)
    moved = np.moveaxis(t, axis, -1)
    out = fake_quant(np.ascontiguousarray(moved), cfg)
    return np.ascontiguousarray(np.moveaxis(out, -1, axis))


def stochastic_round(v: float, lo: float, hi: float, u: float) -> float:
    """One stochastic-rounding step: pick hi with probability (v-lo)/(hi-lo).

    Exposed for tests and docs; the kernels inline the same rule.
    """
    if not lo <= v <= hi:
        raise ValueError(f"value {v} outside bracket [{lo}, {hi}]")
    if lo == hi:
        return lo
    return hi if u < (v - lo) / (hi - lo) else lo


__all__ = [
    "QuantizedTensor",
    "encode",
    "decode",
    "fake_quant",
    "fake_quant_along",
    "stochastic_round",
]
