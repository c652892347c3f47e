"""Finite-difference validation of tape gradients."""

from __future__ import annotations

import numpy as np

from fp4lab.errors import NumericsError

from .tensor import Tape, Tensor


def grad_check(
    f,
    params: list[Tensor],
    step: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` is a zero-argument callable rebuilding a scalar loss from the
    current parameter values; it must be deterministic. Parameters larger
    than ``max_coords`` are probed on a seeded random subset of coordinates,
    everything smaller coordinate by coordinate. The relative error of a
    coordinate is |fd - tape| / max(|fd|, |tape|, floor).
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        out = f()
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.data.shape}")
    if not np.isfinite(out.data):
        raise NumericsError("grad_check probe point has a non-finite value")
    tape.backward(out)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for idx in coords:
            keep = flat[idx]
            flat[idx] = keep + step
            f_plus = float(f().data)
            flat[idx] = keep - step
            f_minus = float(f().data)
            flat[idx] = keep
            fd = (f_plus - f_minus) / (2.0 * step)
            an = float(analytic.reshape(-1)[idx])
            err = abs(fd - an) / max(abs(fd), abs(an), floor)
            if err > worst:
                worst = err
    return worst
