"""Bit-level equivalence between the compiled kernels and the numpy fallback,
plus backend selection plumbing."""

import os
import subprocess
import sys

import numpy as np
import pytest

from fp4lab.fpquant import QuantConfig, fake_quant, rht_signs
from fp4lab.fpquant.backend import active_backend, get_kernels
from fp4lab.fpquant._kernels_py import (
    SCALE_E4M3,
    SCALE_E4M3_EXT,
    SCALE_FLOAT40,
    mix_key,
)

kpy = get_kernels("python")
kcy = pytest.importorskip(
    "fp4lab.fpquant._kernels", reason="compiled kernels not built"
)


def test_default_backend_prefers_compiled_kernels():
    assert active_backend() == "cython"


def test_env_override_selects_python_backend():
    code = (
        "from fp4lab.fpquant.backend import active_backend;"
        "print(active_backend())"
    )
    env = dict(os.environ, FP4LAB_BACKEND="python")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.stdout.strip() == "python"


def test_unknown_backend_name_is_rejected():
    with pytest.raises(ValueError):
        get_kernels("fortran")


@pytest.mark.parametrize("mode", [SCALE_E4M3, SCALE_E4M3_EXT, SCALE_FLOAT40])
@pytest.mark.parametrize("stochastic", [False, True])
def test_encode_and_decode_match_bitwise(mode, stochastic):
    rng = np.random.default_rng(mode * 2 + stochastic)
    for trial in range(30):
        blocks = np.ascontiguousarray(
            rng.standard_normal((rng.integers(1, 20), 16))
            * 10.0 ** rng.integers(-8, 9)
        )
        key = mix_key(trial, mode)
        cp, sp = kpy.encode_blocks(blocks, mode, stochastic, key)
        cc, sc = kcy.encode_blocks(blocks, mode, stochastic, key)
        assert np.array_equal(cp, cc)
        assert np.array_equal(sp, sc)
        assert cp.dtype == cc.dtype
        dp = kpy.decode_blocks(cp, sp, 0.125)
        dc = kcy.decode_blocks(cc, sc, 0.125)
        assert np.array_equal(dp, dc)


def test_block_scales_match_bitwise():
    rng = np.random.default_rng(3)
    blocks = np.ascontiguousarray(rng.standard_normal((200, 16)) * 1e3)
    blocks[0] = 0.0
    for mode in (SCALE_E4M3, SCALE_E4M3_EXT, SCALE_FLOAT40):
        assert np.array_equal(
            kpy.block_scales(blocks, mode), kcy.block_scales(blocks, mode)
        )


def test_partial_reencode_with_row_origins_matches_bitwise():
    rng = np.random.default_rng(4)
    blocks = np.ascontiguousarray(rng.standard_normal((40, 16)) * 3.0)
    scales = kpy.block_scales(blocks, SCALE_E4M3)
    rows = np.array([3, 7, 29], dtype=np.int64)
    sub = np.ascontiguousarray(blocks[rows])
    key = mix_key(11, 0)
    cp = kpy.encode_with_scales(sub, scales[rows], True, key, row_origin=rows)
    cc = kcy.encode_with_scales(sub, scales[rows], True, key, row_origin=rows)
    assert np.array_equal(cp, cc)


def test_walsh_kernels_match_bitwise():
    rng = np.random.default_rng(5)
    for trial in range(20):
        seg = 2 ** int(rng.integers(1, 9))
        rows = int(rng.integers(1, 7))
        x = rng.standard_normal((rows, seg)) * 10.0 ** rng.integers(-3, 4)
        assert np.array_equal(
            kpy.fwht_rows(np.ascontiguousarray(x)),
            kcy.fwht_rows(np.ascontiguousarray(x)),
        )
        signs = rht_signs(trial, seg)
        norm = float(seg) ** -0.5
        fp = kpy.rht_forward_rows(np.ascontiguousarray(x), signs, norm)
        fc = kcy.rht_forward_rows(np.ascontiguousarray(x), signs, norm)
        assert np.array_equal(fp, fc)
        ip = kpy.rht_inverse_rows(np.ascontiguousarray(fp), signs, norm)
        ic = kcy.rht_inverse_rows(np.ascontiguousarray(fc), signs, norm)
        assert np.array_equal(ip, ic)


def test_full_pipeline_matches_across_backends():
    code = """
import numpy as np
from fp4lab.fpquant import QuantConfig, fake_quant
rng = np.random.default_rng(123)
x = rng.standard_normal((6, 80)) * 7.0
cfg = QuantConfig(rounding="stochastic", rht_enabled=True, per_tensor_scale=True,
                  seed=42, sr_nonce=9)
print(fake_quant(x, cfg).tobytes().hex())
"""
    env = dict(os.environ, FP4LAB_BACKEND="python")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
    rng = np.random.default_rng(123)
    x = rng.standard_normal((6, 80)) * 7.0
    cfg = QuantConfig(
        rounding="stochastic", rht_enabled=True, per_tensor_scale=True, seed=42, sr_nonce=9
    )
    assert fake_quant(x, cfg).tobytes().hex() == out.stdout.strip()
