# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of ``_kernels_py``.

Every arithmetic step mirrors the numpy reference (same division order, same
rounding primitive, same clamp order, same scale-settlement rule) so the two
backends return bitwise identical float64 results. Only the default E2M1
level table is supported here; generic codebooks go through the numpy path.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, frexp, ldexp, rint
from libc.stdint cimport int8_t, int64_t, uint64_t

cnp.import_array()

cdef double E4M3_MAX = 448.0
cdef double E4M3_MIN_SCALE = 2.0 ** -7
cdef double SUBNORMAL_STEP = 2.0 ** -9

cdef int SETTLE_CAP = 100

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15UL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9UL
cdef uint64_t MIX2 = 0x94D049BB133111EBUL

# E2M1 magnitude levels by index.
cdef double[8] LEV = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0]


cdef inline uint64_t _splitmix64(uint64_t x) noexcept nogil:
    cdef uint64_t z = x + GAMMA
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t idx) noexcept nogil:
    return <double> (_splitmix64(key + idx) >> 11) * (2.0 ** -53)


cdef inline double _project_e4m3(double v) noexcept nogil:
    """Bounded-grid scale projection: clamp to [2^-7, 448], round to grid."""
    cdef int e
    cdef double step, r
    if v <= 0.0:
        return 0.0
    if v < E4M3_MIN_SCALE:
        v = E4M3_MIN_SCALE
    elif v > E4M3_MAX:
        v = E4M3_MAX
    frexp(v, &e)
    step = ldexp(1.0, e - 4)
    if step < SUBNORMAL_STEP:
        step = SUBNORMAL_STEP
    r = rint(v / step) * step
    if r > E4M3_MAX:
        r = E4M3_MAX
    return r


cdef inline double _project_e4m3_ext(double v) noexcept nogil:
    """Unbounded 3-bit-mantissa grid projection (ties to even)."""
    cdef int e
    cdef double step
    if v <= 0.0:
        return 0.0
    frexp(v, &e)
    step = ldexp(1.0, e - 4)
    return rint(v / step) * step


cdef inline double _round_40bit(double v) noexcept nogil:
    cdef int e
    cdef double m
    if v <= 0.0:
        return 0.0
    m = frexp(v, &e)
    return ldexp(rint(ldexp(m, 40)), e - 40)


cdef inline double _project_mode(double v, int mode) noexcept nogil:
    if mode == 0:
        return _project_e4m3(v)
    elif mode == 1:
        return _project_e4m3_ext(v)
    else:
        return _round_40bit(v)


cdef inline int _nearest_idx(double m) noexcept nogil:
    """Nearest E2M1 level index for m in [0, 6]; midpoint ties to even index."""
    if m <= 0.25:
        return 0                       # tie 0.25 -> even index 0
    elif m < 0.75:
        return 1
    elif m == 0.75:
        return 2                       # tie -> even
    elif m <= 1.25:
        return 2                       # tie 1.25 -> even index 2
    elif m < 1.75:
        return 3
    elif m == 1.75:
        return 4                       # tie -> even
    elif m <= 2.5:
        return 4                       # tie 2.5 -> even index 4
    elif m < 3.5:
        return 5
    elif m == 3.5:
        return 6                       # tie -> even
    elif m <= 5.0:
        return 6                       # tie 5.0 -> even index 6
    else:
        return 7


cdef inline int _floor_idx(double m) noexcept nogil:
    """Largest level index whose value is <= m, for m in [0, 6]."""
    if m < 0.5:
        return 0
    elif m < 1.0:
        return 1
    elif m < 1.5:
        return 2
    elif m < 2.0:
        return 3
    elif m < 3.0:
        return 4
    elif m < 4.0:
        return 5
    elif m < 6.0:
        return 6
    else:
        return 7


cdef inline int _encode_row(double[:, ::1] blocks, int8_t[:, :] codes,
                            Py_ssize_t i, Py_ssize_t bs, double s,
                            bint stochastic, uint64_t key,
                            int64_t origin) noexcept nogil:
    """Code one block row against scale s; returns the max |level index|."""
    cdef Py_ssize_t j
    cdef double x, m, lo_v, gap, p, u
    cdef int idx, lo, hi, maxidx = 0
    for j in range(bs):
        if s <= 0.0:
            codes[i, j] = 0
            continue
        x = blocks[i, j] / s
        if x > 6.0:
            x = 6.0
        elif x < -6.0:
            x = -6.0
        m = fabs(x)
        if not stochastic:
            idx = _nearest_idx(m)
        else:
            lo = _floor_idx(m)
            hi = lo + 1 if lo < 7 else 7
            lo_v = LEV[lo]
            gap = LEV[hi] - lo_v
            if gap > 0.0:
                p = (m - lo_v) / gap
            else:
                p = 0.0
            u = _uniform(key, <uint64_t> (origin * bs + j))
            idx = hi if u < p else lo
        if idx > maxidx:
            maxidx = idx
        codes[i, j] = <int8_t> (-idx if x < 0.0 else idx)
    return maxidx


def encode_blocks(double[:, ::1] blocks, int mode, bint stochastic, uint64_t key):
    """Full pipeline: derive scales, settle them, code elements.

    Returns (codes, scales); same settlement rule as the numpy reference.
    """
    cdef Py_ssize_t nb = blocks.shape[0]
    cdef Py_ssize_t bs = blocks.shape[1]
    cdef cnp.ndarray[cnp.int8_t, ndim=2] codes_arr = np.zeros((nb, bs), dtype=np.int8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scales_arr = np.empty(nb, dtype=np.float64)
    cdef int8_t[:, :] codes = codes_arr
    cdef double[::1] scales = scales_arr
    cdef Py_ssize_t i, j
    cdef double amax, a, s, target
    cdef int maxidx, it
    cdef bint converged = True

    with nogil:
        for i in range(nb):
            amax = 0.0
            for j in range(bs):
                a = fabs(blocks[i, j])
                if a > amax:
                    amax = a
            if amax == 0.0:
                scales[i] = 0.0
                continue
            s = _project_mode(amax / 6.0, mode)
            maxidx = _encode_row(blocks, codes, i, bs, s, stochastic, key, <int64_t> i)
            if stochastic:
                for it in range(SETTLE_CAP):
                    if s <= 0.0:
                        break
                    target = _project_mode(LEV[maxidx] * s / 6.0, mode)
                    if maxidx == 0:
                        target = 0.0
                    if target == s:
                        break
                    s = target
                    maxidx = _encode_row(blocks, codes, i, bs, s, stochastic, key, <int64_t> i)
                else:
                    converged = False
            scales[i] = s

    if not converged:
        raise ArithmeticError("block scale settlement did not converge")
    return codes_arr, scales_arr


def encode_with_scales(double[:, ::1] blocks, double[::1] scales,
                       bint stochastic, uint64_t key,
                       int64_t[::1] row_origin=None):
    """Signed E2M1 level indices for blocks against fixed scales."""
    cdef Py_ssize_t nb = blocks.shape[0]
    cdef Py_ssize_t bs = blocks.shape[1]
    cdef cnp.ndarray[cnp.int8_t, ndim=2] codes_arr = np.zeros((nb, bs), dtype=np.int8)
    cdef int8_t[:, :] codes = codes_arr
    cdef Py_ssize_t i
    cdef int64_t origin

    with nogil:
        for i in range(nb):
            origin = row_origin[i] if row_origin is not None else <int64_t> i
            _encode_row(blocks, codes, i, bs, scales[i], stochastic, key, origin)
    return codes_arr


def block_scales(double[:, ::1] blocks, int mode):
    """Unsettled per-block scales (amax/6 projected onto the mode's grid)."""
    cdef Py_ssize_t nb = blocks.shape[0]
    cdef Py_ssize_t bs = blocks.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scales_arr = np.empty(nb, dtype=np.float64)
    cdef double[::1] scales = scales_arr
    cdef Py_ssize_t i, j
    cdef double amax, a

    with nogil:
        for i in range(nb):
            amax = 0.0
            for j in range(bs):
                a = fabs(blocks[i, j])
                if a > amax:
                    amax = a
            if amax == 0.0:
                scales[i] = 0.0
            else:
                scales[i] = _project_mode(amax / 6.0, mode)
    return scales_arr


def decode_blocks(int8_t[:, ::1] codes, double[::1] scales, double tensor_scale):
    """Reconstruct block values: sign(code) * level * scale * tensor_scale."""
    cdef Py_ssize_t nb = codes.shape[0]
    cdef Py_ssize_t bs = codes.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] vals_arr = np.empty((nb, bs), dtype=np.float64)
    cdef double[:, ::1] vals = vals_arr
    cdef Py_ssize_t i, j
    cdef int c
    cdef double s, v

    with nogil:
        for i in range(nb):
            s = scales[i]
            for j in range(bs):
                c = codes[i, j]
                if c < 0:
                    v = -LEV[-c] * s
                else:
                    v = LEV[c] * s
                if tensor_scale != 1.0:
                    v = v * tensor_scale
                vals[i, j] = v
    return vals_arr


cdef void _fwht_body(double[:, ::1] x, Py_ssize_t rows, Py_ssize_t length) noexcept nogil:
    cdef Py_ssize_t r, base, j, h
    cdef double a, b
    h = 1
    while h < length:
        for r in range(rows):
            base = 0
            while base < length:
                for j in range(base, base + h):
                    a = x[r, j]
                    b = x[r, j + h]
                    x[r, j] = a + b
                    x[r, j + h] = a - b
                base += 2 * h
        h *= 2


def fwht_rows(cnp.ndarray[cnp.float64_t, ndim=2] x_arr):
    """Unnormalized in-place FWHT per row, same butterfly schedule as numpy."""
    cdef double[:, ::1] x = x_arr
    with nogil:
        _fwht_body(x, x.shape[0], x.shape[1])
    return x_arr


def rht_forward_rows(cnp.ndarray[cnp.float64_t, ndim=2] x_arr,
                     const double[::1] signs, double norm):
    """In-place sign multiply, segmented FWHT, and 1/sqrt(seg) scaling."""
    cdef double[:, ::1] x = x_arr
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t seg = x.shape[1]
    cdef Py_ssize_t nseg = signs.shape[0] // seg
    cdef Py_ssize_t r, j, off

    with nogil:
        for r in range(rows):
            off = (r % nseg) * seg
            for j in range(seg):
                x[r, j] = x[r, j] * signs[off + j]
        _fwht_body(x, rows, seg)
        for r in range(rows):
            for j in range(seg):
                x[r, j] = x[r, j] * norm
    return x_arr


def rht_inverse_rows(cnp.ndarray[cnp.float64_t, ndim=2] x_arr,
                     const double[::1] signs, double norm):
    """In-place adjoint of ``rht_forward_rows`` (FWHT, norm, then signs)."""
    cdef double[:, ::1] x = x_arr
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t seg = x.shape[1]
    cdef Py_ssize_t nseg = signs.shape[0] // seg
    cdef Py_ssize_t r, j, off

    with nogil:
        _fwht_body(x, rows, seg)
        for r in range(rows):
            off = (r % nseg) * seg
            for j in range(seg):
                x[r, j] = x[r, j] * norm * signs[off + j]
    return x_arr
