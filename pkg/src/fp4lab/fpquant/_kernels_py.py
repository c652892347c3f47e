"""Pure-numpy reference kernels for the block-float codec.

The compiled extension (``_kernels.pyx``) mirrors this module operation for
operation; both backends must produce bitwise-identical float64 results. Keep
the two in lockstep: every arithmetic step here (division order, rounding
primitive, clamp order) is part of the contract.

Number formats
--------------
Elements are coded against the signed E2M1 value table

    +-0, +-0.5, +-1.0, +-1.5, +-2.0, +-3.0, +-4.0, +-6.0

(1 sign bit, 2 exponent bits with bias 1, 1 mantissa bit; 0.5 is the one
subnormal). Codes are stored as signed level indices, so ``-5`` means level
3.0 with a negative sign.

Block scales are the block amax divided by the top level, projected onto one
of three grids (``mode`` below):

- 0, bounded e4m3: a value grid emulating an FN-style E4M3 float (1 sign,
  4 exponent bits with bias 7, 3 mantissa bits, max 448, no infinities).
  Only the top half of the subnormal range is kept: representable scales are
  {4..7} * 2^-9 plus all normals in [2^-6, 448]; smaller positive ideals are
  clamped up to 2^-7 and the top is clamped to 448. The discarded bottom
  quarter of the subnormal range would let nearest rounding overshoot the
  ideal scale by up to 2x, after which a block's maximum element re-encodes
  to a different code and fake-quant stops being idempotent.
- 1, extended e4m3: the same 3-bit mantissa grid with an unbounded exponent.
  Used by per-tensor scaling, which afterwards factors the composed scale
  into (e4m3 block scale) * (power-of-two tensor scale). On this grid the
  nearest projection overshoots by at most 9/8.5, so the block maximum always
  re-encodes to the top level.
- 2, float: the ideal scale rounded to a 40-bit significand. The spare
  mantissa bits keep ``code * scale`` and ``6 * scale`` exact in float64,
  and the grid half-step (~2^-41 relative) dwarfs the roundoff a Hadamard
  forward/inverse round trip adds, so re-encoding a decoded tensor derives
  the same scale bit-for-bit instead of wobbling one ulp.

Scale settlement
----------------
``encode_blocks`` iterates each block's scale until it is a fixed point of
re-encoding: scale -> project(max_coded_magnitude * scale / top_level). In
nearest mode the block maximum always codes to the top level (the projection
grids above overshoot by less than 6/5), so the first scale is already
settled. In stochastic mode the maximum may round down, and without
settlement a second fake-quant pass would derive a different scale; settling
makes fake_quant idempotent in both rounding modes. Each iteration shrinks
the scale by at least x0.706, which clamps the block maximum to the top
level within a few steps, so the loop terminates in at most 4 rounds on the
default codebook.

Stochastic rounding draws one uniform per element from a counter-based hash
(splitmix64 of ``key + element_index``), so results do not depend on
evaluation order, thread count, or settlement re-encoding.
"""

from __future__ import annotations

import numpy as np

# Signed E2M1 magnitude levels. Index parity doubles as mantissa parity, so
# "ties to even index" below is ties-to-even-mantissa.
E2M1_LEVELS = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0)

_LEVELS = np.array(E2M1_LEVELS, dtype=np.float64)
_BOUNDS = (_LEVELS[:-1] + _LEVELS[1:]) / 2.0  # midpoints, all exact in binary

SCALE_E4M3 = 0
SCALE_E4M3_EXT = 1
SCALE_FLOAT40 = 2

E4M3_MAX = 448.0
E4M3_MIN_SCALE = 2.0 ** -7  # smallest bounded-mode block scale
_SUBNORMAL_STEP = 2.0 ** -9

_SETTLE_CAP = 100

_SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x: np.ndarray) -> np.ndarray:
    """One splitmix64 finalizer round over a uint64 array (wrapping)."""
    z = (x + _SPLITMIX_GAMMA).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def mix_key(*parts: int) -> int:
    """Fold integers into one 64-bit stream key (order-sensitive)."""
    k = 0x7F4A7C15
    for p in parts:
        seed = (k + (p & 0xFFFFFFFFFFFFFFFF)) & 0xFFFFFFFFFFFFFFFF
        k = int(splitmix64(np.asarray([seed], dtype=np.uint64))[0])
    return k


def sr_uniform(key: int, index) -> np.ndarray:
    """Uniform draws in [0, 1) for the given element indices (counter-based)."""
    idx = np.asarray(index, dtype=np.uint64)
    h = splitmix64(np.uint64(key) + idx)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def project_e4m3(v: np.ndarray) -> np.ndarray:
    """Round non-negative values to the nearest bounded-grid scale (ties to even).

    Zeros stay zero; positive values are clamped into [2^-7, 448] first.
    """
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros_like(v)
    pos = v > 0.0
    if not np.any(pos):
        return out
    w = np.clip(v[pos], E4M3_MIN_SCALE, E4M3_MAX)
    _, e = np.frexp(w)
    step = np.ldexp(1.0, e - 4)
    np.maximum(step, _SUBNORMAL_STEP, out=step)
    r = np.rint(w / step) * step
    np.minimum(r, E4M3_MAX, out=r)
    out[pos] = r
    return out


def project_e4m3_ext(v: np.ndarray) -> np.ndarray:
    """Nearest point of the unbounded 3-bit-mantissa grid (ties to even)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros_like(v)
    pos = v > 0.0
    if not np.any(pos):
        return out
    w = v[pos]
    _, e = np.frexp(w)
    step = np.ldexp(1.0, e - 4)
    out[pos] = np.rint(w / step) * step
    return out


def round_40bit(v: np.ndarray) -> np.ndarray:
    """Round non-negative values to a 40-bit significand (rel. error <= 2^-40)."""
    v = np.asarray(v, dtype=np.float64)
    m, e = np.frexp(v)
    return np.ldexp(np.rint(np.ldexp(m, 40)), e - 40)


def _project_mode(v: np.ndarray, mode: int) -> np.ndarray:
    if mode == SCALE_E4M3:
        return project_e4m3(v)
    if mode == SCALE_E4M3_EXT:
        return project_e4m3_ext(v)
    if mode == SCALE_FLOAT40:
        return round_40bit(v)
    raise ValueError(f"unknown scale mode {mode}")


def block_scales(blocks: np.ndarray, mode: int, maxlev: float = 6.0) -> np.ndarray:
    """Unsettled per-block scales for a (nblocks, block_size) array.

    All-zero blocks (and ideals that underflow float64) get scale 0.0; their
    codes are forced to zero downstream.
    """
    amax = np.max(np.abs(blocks), axis=1)
    scales = _project_mode(amax / maxlev, mode)
    scales[amax == 0.0] = 0.0
    return scales


def nearest_level_index(mag: np.ndarray, levels: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Nearest level index for magnitudes already clamped into the level range.

    Ties (a magnitude exactly on a midpoint) go to the even index.
    """
    idx_l = np.searchsorted(bounds, mag, side="left")
    idx_r = np.searchsorted(bounds, mag, side="right")
    idx = idx_r
    tie = idx_l != idx_r
    if np.any(tie):
        tl = idx_l[tie]
        idx = idx_r.copy()
        idx[tie] = np.where(tl % 2 == 0, tl, tl + 1)
    return idx


def _resolve_levels(levels):
    if levels is None:
        return _LEVELS, _BOUNDS
    levels = np.asarray(levels, dtype=np.float64)
    return levels, (levels[:-1] + levels[1:]) / 2.0


def encode_with_scales(
    blocks: np.ndarray,
    scales: np.ndarray,
    stochastic: bool,
    key: int,
    levels: np.ndarray | None = None,
    row_origin: np.ndarray | None = None,
):
    """Quantize blocks against fixed scales (no settlement).

    Returns signed level indices (int8 for tables of <= 127 levels, else
    int32). ``key`` seeds the stochastic-rounding stream; the counter for
    element (i, j) is ``row_origin[i] * block_size + j``, where row_origin
    defaults to the row number, so re-encoding a subset of rows reuses the
    very same uniforms.
    """
    levels, bounds = _resolve_levels(levels)
    maxlev = levels[-1]

    nblocks, bs = blocks.shape
    safe = np.where(scales > 0.0, scales, 1.0)
    x = blocks / safe[:, None]
    np.clip(x, -maxlev, maxlev, out=x)
    mag = np.abs(x)

    if not stochastic:
        idx = nearest_level_index(mag, levels, bounds)
    else:
        lo = np.searchsorted(levels, mag, side="right") - 1
        hi = np.minimum(lo + 1, len(levels) - 1)
        lo_v = levels[lo]
        gap = levels[hi] - lo_v
        p = np.where(gap > 0.0, (mag - lo_v) / np.where(gap > 0.0, gap, 1.0), 0.0)
        if row_origin is None:
            counters = np.arange(nblocks * bs, dtype=np.uint64).reshape(nblocks, bs)
        else:
            counters = (
                row_origin.astype(np.uint64)[:, None] * np.uint64(bs)
                + np.arange(bs, dtype=np.uint64)[None, :]
            )
        u = sr_uniform(key, counters)
        idx = np.where(u < p, hi, lo)

    idx[scales <= 0.0] = 0
    dtype = np.int8 if len(levels) <= 127 else np.int32
    codes = np.where(x < 0.0, -idx, idx).astype(dtype)
    return codes


def encode_blocks(
    blocks: np.ndarray,
    mode: int,
    stochastic: bool,
    key: int,
    levels: np.ndarray | None = None,
):
    """Full block pipeline: derive scales, settle them, code the elements.

    Returns (codes, scales). Settlement re-encodes a block whenever the
    scale implied by its own coded maximum differs from the scale used,
    which only happens in stochastic mode (see module docstring).
    """
    lev, _ = _resolve_levels(levels)
    maxlev = float(lev[-1])
    scales = block_scales(blocks, mode, maxlev=maxlev)
    codes = encode_with_scales(blocks, scales, stochastic, key, levels=levels)
    if not stochastic:
        return codes, scales

    nblocks, bs = blocks.shape
    origin = np.arange(nblocks, dtype=np.int64)
    for _ in range(_SETTLE_CAP):
        coded_amax = lev[np.max(np.abs(codes), axis=1)] * scales
        target = _project_mode(coded_amax / maxlev, mode)
        target[coded_amax == 0.0] = 0.0
        unsettled = target != scales
        if not unsettled.any():
            return codes, scales
        rows = np.flatnonzero(unsettled)
        scales[rows] = target[rows]
        codes[rows] = encode_with_scales(
            np.ascontiguousarray(blocks[rows]),
            scales[rows],
            stochastic,
            key,
            levels=levels,
            row_origin=origin[rows],
        )
    raise ArithmeticError("block scale settlement did not converge")


def decode_blocks(codes: np.ndarray, scales: np.ndarray, tensor_scale: float) -> np.ndarray:
    """Reconstruct block values: sign(code) * level(|code|) * scale * tensor_scale.

    Default-codebook only (the compiled twin matches this bit for bit);
    generic codebooks decode in the orchestration layer.
    """
    mags = _LEVELS[np.abs(codes)]
    vals = np.copysign(mags, codes.astype(np.float64, copy=False))
    vals = vals * scales[:, None]
    if tensor_scale != 1.0:
        vals = vals * tensor_scale
    return vals


def fwht_rows(x: np.ndarray) -> np.ndarray:
    """Unnormalized in-place fast Walsh-Hadamard transform of each row.

    Row length must be a power of two. The butterfly schedule (h = 1, 2, 4,
    ...) fixes the floating-point evaluation order; the compiled kernel uses
    the same schedule.
    """
    rows, length = x.shape
    h = 1
    while h < length:
        y = x.reshape(rows, -1, 2, h)
        a = y[:, :, 0, :].copy()
        b = y[:, :, 1, :]
        y[:, :, 0, :] = a + b
        y[:, :, 1, :] = a - b
        h *= 2
    return x


def rht_forward_rows(x: np.ndarray, signs: np.ndarray, norm: float) -> np.ndarray:
    """In-place sign multiply, segmented FWHT, and 1/sqrt(seg) scaling.

    ``x`` is (rows, seg) with rows cycling through the last-axis sign
    pattern; op order (signs, butterflies, norm) matches the compiled twin.
    """
    seg = x.shape[1]
    nseg = signs.shape[0] // seg
    x.reshape(-1, nseg, seg)[...] *= signs.reshape(nseg, seg)
    fwht_rows(x)
    x *= norm
    return x


def rht_inverse_rows(x: np.ndarray, signs: np.ndarray, norm: float) -> np.ndarray:
    """In-place adjoint of ``rht_forward_rows`` (FWHT, norm, then signs)."""
    seg = x.shape[1]
    nseg = signs.shape[0] // seg
    fwht_rows(x)
    x *= norm
    x.reshape(-1, nseg, seg)[...] *= signs.reshape(nseg, seg)
    return x
