"""Benchmark the compiled codec kernels against the numpy reference backend.

Runs the hot kernel entry points (block encode in both rounding modes,
block decode, and the Hadamard row transform) on the same inputs through
both backends, checks the outputs are bitwise identical, and reports
nanoseconds per element plus the speedup of the compiled path.

Usage:
    python benchmarks/bench_codec.py [--elements N] [--repeats K] [--seed S]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fp4lab.fpquant import active_backend, get_kernels, mix_key
from fp4lab.fpquant._kernels_py import SCALE_E4M3_EXT
from fp4lab.fpquant.hadamard import rht_signs

BLOCK = 16


def _time(fn, repeats: int) -> float:
    """Best-of-repeats wall time in seconds (first call warms caches)."""
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _check_equal(name: str, a, b) -> None:
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    for x, y in zip(a, b):
        if not np.array_equal(np.asarray(x), np.asarray(y)):
            raise AssertionError(f"{name}: backends disagree")


def bench(elements: int, repeats: int, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    blocks = rng.normal(0.0, 1.0, size=(elements // BLOCK, BLOCK))
    blocks *= np.exp(rng.normal(0.0, 2.0, size=(blocks.shape[0], 1)))
    key = mix_key(seed, 0)

    py = get_kernels("python")
    try:
        cy = get_kernels("cython")
    except ImportError:
        cy = None

    codes_py, scales_py = py.encode_blocks(blocks, SCALE_E4M3_EXT, False, key)
    signs = rht_signs(seed, BLOCK)
    norm = 1.0 / np.sqrt(BLOCK)

    cases = {
        "encode nearest": lambda k: k.encode_blocks(blocks, SCALE_E4M3_EXT, False, key),
        "encode stochastic": lambda k: k.encode_blocks(blocks, SCALE_E4M3_EXT, True, key),
        "decode": lambda k: k.decode_blocks(codes_py, scales_py, 1.0),
        # the RHT kernel transforms rows in place, so give it a fresh copy
        "rht rows": lambda k: k.rht_forward_rows(blocks.copy(), signs, norm),
    }

    rows = []
    for name, call in cases.items():
        out_py = call(py)
        row = {"case": name,
               "python_ns_per_elem": _time(lambda: call(py), repeats)
               / elements * 1e9}
        if cy is not None:
            out_cy = call(cy)
            _check_equal(name, out_py, out_cy)
            row["cython_ns_per_elem"] = (_time(lambda: call(cy), repeats)
                                         / elements * 1e9)
            row["speedup"] = row["python_ns_per_elem"] / row["cython_ns_per_elem"]
        rows.append(row)
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--elements", type=int, default=1 << 20)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    print(f"active backend: {active_backend()}; "
          f"{args.elements} elements, block {BLOCK}, best of {args.repeats}")
    rows = bench(args.elements, args.repeats, args.seed)
    header = f"{'case':<20} {'python ns/elem':>15} {'cython ns/elem':>15} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for row in rows:
        cy_ns = row.get("cython_ns_per_elem")
        cy_txt = f"{cy_ns:15.2f}" if cy_ns is not None else f"{'n/a':>15}"
        sp_txt = f"{row['speedup']:9.1f}x" if "speedup" in row else f"{'n/a':>9}"
        print(f"{row['case']:<20} {row['python_ns_per_elem']:15.2f} {cy_txt} {sp_txt}")
    if rows and "speedup" in rows[0]:
        print("outputs bitwise identical across backends")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
