"""Randomized Hadamard preconditioner.

The transform multiplies the last axis by a seed-derived random sign diagonal
and then applies a normalized fast Walsh-Hadamard transform in contiguous
segments whose length is the largest power-of-two divisor of the axis. The
composition is orthonormal, so norms (and hence SNR) are basis-invariant; its
job is to spread outliers across a block before quantization.

Sign diagonals are drawn once per (seed, axis length) and cached; repeated
calls see the same fixed preconditioner.
"""

from __future__ import annotations

import threading

import numpy as np

from . import backend
from ._kernels_py import splitmix64

_RHT_TAG = 0x52485453  # stream-domain separator for sign draws

_sign_cache: dict[tuple[int, int], np.ndarray] = {}
_sign_lock = threading.Lock()


def largest_pow2_divisor(n: int) -> int:
    return n & -n


def rht_signs(seed: int, length: int) -> np.ndarray:
    """The +-1 diagonal for a given seed and last-axis length (cached)."""
    key = (int(seed), int(length))
    with _sign_lock:
        cached = _sign_cache.get(key)
    if cached is not None:
        return cached
    base = splitmix64(np.asarray([np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(_RHT_TAG)], dtype=np.uint64))[0]
    h = splitmix64(base + np.arange(length, dtype=np.uint64))
    signs = np.where((h >> np.uint64(63)) & np.uint64(1), 1.0, -1.0)
    signs.flags.writeable = False
    with _sign_lock:
        _sign_cache[key] = signs
    return signs


def hadamard_transform(t: np.ndarray, seed: int, inverse: bool = False) -> np.ndarray:
    """Apply the randomized Hadamard transform (or its inverse) to the last axis.

    Raises ValueError when the last axis has no power-of-two factor >= 2
    (odd lengths), because the segmented transform would degenerate to the
    identity.
    """
    t = np.asarray(t)
    n = t.shape[-1]
    seg = largest_pow2_divisor(n)
    if seg < 2:
        raise ValueError(
            f"last axis has length {n} with no power-of-two factor >= 2; "
            "the Hadamard preconditioner needs an even axis"
        )
    kern = backend.get_kernels()
    signs = rht_signs(seed, n)
    norm = 1.0 / np.sqrt(seg)

    rows = np.array(t, dtype=np.float64, order="C").reshape(-1, seg)
    if inverse:
        kern.rht_inverse_rows(rows, signs, norm)
    else:
        kern.rht_forward_rows(rows, signs, norm)
    return rows.reshape(t.shape)
