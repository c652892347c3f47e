"""Differentiable primitives.

Every operation computes its forward value with plain numpy, verifies the
result is finite, and, when a tape is active and a parent needs gradients,
appends one backward closure implementing the textbook adjoint. Gradient
arrays are treated as immutable: accumulation always allocates, so closures
may hand the same array to several parents.

quant_matmul is the quantization-aware GEMM. Its forward fake-quantizes both
operands along the contraction axis with nearest rounding and multiplies the
decoded values. The backward treats fake-quantization as identity (straight
through); with ``cfg.quantize_grads`` the four operands of the two backward
GEMMs are freshly fake-quantized along each GEMM's own contraction axis,
using ``cfg.rounding`` and per-operand counter streams, which is how
stochastic rounding enters training while forward passes stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from fp4lab.errors import NumericsError
from fp4lab.fpquant import QuantConfig, fake_quant_along, mix_key

from .tensor import Tape, Tensor, active_tape, ensure_finite

NORM_EPS = 1e-12
RMS_EPS = 1e-12


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    ensure_finite(data, op)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        def run():
            if out.grad is not None:
                backward(out.grad)
        tape.record(out, run)
    return out


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make("add", data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a.accumulate_grad(-g)

    return _make("neg", -a.data, (a,), backward)


def sub(a, b) -> Tensor:
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make("mul", data, (a, b), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    data = a.data * s

    def backward(g):
        a.accumulate_grad(g * s * (1.0 + a.data * (1.0 - s)))

    return _make("silu", data, (a,), backward)


def absval(a) -> Tensor:
    """Elementwise absolute value (subgradient 0 at the kink)."""
    a = as_tensor(a)

    def backward(g):
        a.accumulate_grad(g * np.sign(a.data))

    return _make("absval", np.abs(a.data), (a,), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Hyperbolic-tangent form of the Gaussian error linear unit."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner
        a.accumulate_grad(g * local)

    return _make("gelu", data, (a,), backward)


# ---------------------------------------------------------------- shape


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a.accumulate_grad(g.reshape(a.shape))

    return _make("reshape", data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a.accumulate_grad(g.transpose(inverse))

    return _make("transpose", a.data.transpose(axes), (a,), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start + length) along one axis."""
    a = as_tensor(a)
    ax = axis if axis >= 0 else a.ndim + axis
    if not 0 <= ax < a.ndim:
        raise ValueError(f"narrow axis {axis} out of range for shape {a.shape}")
    if start < 0 or length < 1 or start + length > a.shape[ax]:
        raise ValueError(
            f"narrow window [{start}, {start + length}) exceeds axis {ax} "
            f"of shape {a.shape}"
        )
    idx = tuple(
        slice(start, start + length) if i == ax else slice(None) for i in range(a.ndim)
    )
    data = a.data[idx].copy()

    def backward(g):
        ga = np.zeros(a.shape, dtype=g.dtype)
        ga[idx] = g
        a.accumulate_grad(ga)

    return _make("narrow", data, (a,), backward)


def concat(parts, axis: int = -1) -> Tensor:
    """Join tensors along one axis; gradient routes each slice back."""
    ts = [as_tensor(p) for p in parts]
    if len(ts) < 2:
        raise ValueError("concat needs at least two tensors")
    nd = ts[0].ndim
    ax = axis if axis >= 0 else nd + axis
    if not 0 <= ax < nd:
        raise ValueError(f"concat axis {axis} out of range for ndim {nd}")
    for t in ts[1:]:
        if t.ndim != nd or any(
            i != ax and t.shape[i] != ts[0].shape[i] for i in range(nd)
        ):
            raise ValueError(
                f"concat shapes {[t.shape for t in ts]} do not align off axis {ax}"
            )
    data = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        for t, s0, s1 in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = tuple(
                    slice(s0, s1) if i == ax else slice(None) for i in range(nd)
                )
                t.accumulate_grad(g[idx].copy())

    return _make("concat", data, tuple(ts), backward)


def tsum(a) -> Tensor:
    """Sum of all elements (scalar output)."""
    a = as_tensor(a)

    def backward(g):
        a.accumulate_grad(np.broadcast_to(g, a.shape))

    return _make("tsum", a.data.sum(), (a,), backward)


# ---------------------------------------------------------------- matmuls


def _check_matmul_2d(a: Tensor, b: Tensor, op: str) -> None:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"{op} shapes {a.shape} and {b.shape} do not align")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_matmul_2d(a, b, "matmul")

    def backward(g):
        if a.requires_grad:
            ga = g @ b.data.T
            ensure_finite(ga, "matmul backward")
            a.accumulate_grad(ga)
        if b.requires_grad:
            gb = a.data.T @ g
            ensure_finite(gb, "matmul backward")
            b.accumulate_grad(gb)

    return _make("matmul", a.data @ b.data, (a, b), backward)


def bmm(a, b) -> Tensor:
    """Batched matmul over identical leading dims (attention scores/values)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 3 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"bmm shapes {a.shape} and {b.shape} do not align")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            b.accumulate_grad(a.data.swapaxes(-1, -2) @ g)

    return _make("bmm", a.data @ b.data, (a, b), backward)


@dataclass(frozen=True)
class GemmTap:
    """Eager copies of one quantized GEMM's operands for analysis."""

    name: str
    a: np.ndarray
    a_hat: np.ndarray
    b: np.ndarray
    b_hat: np.ndarray


def quant_matmul(a, b, cfg: QuantConfig | None, tap: list | None = None, name: str = "") -> Tensor:
    """GEMM with fake-quantized operands; cfg None means plain matmul.

    The contraction axis is the blocked axis on both sides. Forward rounding
    is nearest; ``cfg.rounding`` governs the backward-GEMM operands when
    ``cfg.quantize_grads`` is set, with stream tags 2..5 separating the four
    operands' stochastic-rounding counters. With cfg None the tap (when
    requested) records the raw operands as their own quantized values.
    """
    if cfg is None:
        a, b = as_tensor(a), as_tensor(b)
        if tap is not None:
            _check_matmul_2d(a, b, "quant_matmul")
            tap.append(GemmTap(name, a.data.copy(), a.data.copy(),
                               b.data.copy(), b.data.copy()))
        return matmul(a, b)
    a, b = as_tensor(a), as_tensor(b)
    _check_matmul_2d(a, b, "quant_matmul")

    fwd_cfg = cfg if cfg.rounding == "nearest" else replace(cfg, rounding="nearest")
    a_hat = fake_quant_along(a.data, fwd_cfg, axis=-1)
    b_hat = fake_quant_along(b.data, fwd_cfg, axis=0)
    if a_hat.dtype != a.data.dtype:
        a_hat = a_hat.astype(a.data.dtype)
        b_hat = b_hat.astype(b.data.dtype)
    if tap is not None:
        tap.append(GemmTap(name, a.data.copy(), a_hat, b.data.copy(), b_hat))

    def backward(g):
        if cfg.quantize_grads:
            tcfg = lambda k: replace(cfg, sr_nonce=mix_key(cfg.sr_nonce, k))
            if a.requires_grad:
                gq = fake_quant_along(g, tcfg(2), axis=-1)
                bq = fake_quant_along(b.data, tcfg(3), axis=-1)
                ga = gq @ bq.T
                ensure_finite(ga, "quant_matmul backward")
                a.accumulate_grad(ga)
            if b.requires_grad:
                aq = fake_quant_along(a.data, tcfg(4), axis=0)
                gq = fake_quant_along(g, tcfg(5), axis=0)
                gb = aq.T @ gq
                ensure_finite(gb, "quant_matmul backward")
                b.accumulate_grad(gb)
        else:
            if a.requires_grad:
                ga = g @ b_hat.T
                ensure_finite(ga, "quant_matmul backward")
                a.accumulate_grad(ga)
            if b.requires_grad:
                gb = a_hat.T @ g
                ensure_finite(gb, "quant_matmul backward")
                b.accumulate_grad(gb)

    return _make("quant_matmul", a_hat @ b_hat, (a, b), backward)


# ---------------------------------------------------------------- normalization


def row_normalize(a, axis: int = -1) -> Tensor:
    """Scale each slice along ``axis`` to unit L2 norm."""
    a = as_tensor(a)
    norm = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    if np.any(norm < NORM_EPS):
        raise NumericsError(
            f"row_normalize hit a slice with norm < {NORM_EPS} along axis {axis}"
        )
    y = a.data / norm

    def backward(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        a.accumulate_grad((g - y * dot) / norm)

    return _make("row_normalize", y, (a,), backward)


def rmsnorm(a, axis: int = -1) -> Tensor:
    """Divide by the root-mean-square along ``axis`` (no learnable gain)."""
    a = as_tensor(a)
    n = a.shape[axis]
    mean_sq = np.mean(a.data * a.data, axis=axis, keepdims=True)
    r = 1.0 / np.sqrt(mean_sq + RMS_EPS)
    y = a.data * r

    def backward(g):
        dot = np.sum(g * a.data, axis=axis, keepdims=True)
        a.accumulate_grad(r * g - (r**3 / n) * a.data * dot)

    return _make("rmsnorm", y, (a,), backward)


# ---------------------------------------------------------------- softmax family


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        a.accumulate_grad(y * (g - dot))

    return _make("softmax", y, (a,), backward)


def causal_softmax(a) -> Tensor:
    """Softmax over the last axis with positions after the query masked out.

    Expects score tensors shaped (..., T, T); entry (i, j) with j > i gets
    zero probability and zero gradient.
    """
    a = as_tensor(a)
    t = a.shape[-1]
    if a.ndim < 2 or a.shape[-2] != t:
        raise ValueError(f"causal_softmax needs (..., T, T) scores, got {a.shape}")
    keep = np.tril(np.ones((t, t), dtype=bool))
    masked = np.where(keep, a.data, -np.inf)
    shifted = masked - masked.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        a.accumulate_grad(y * (g - dot))

    return _make("causal_softmax", y, (a,), backward)


# ---------------------------------------------------------------- lookup and loss


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"embedding ids must be integers, got {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"embedding ids out of range [0, {table.shape[0]}): "
            f"min {ids.min()}, max {ids.max()}"
        )

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        table.accumulate_grad(gt)

    return _make("embedding", table.data[ids], (table,), backward)


def cross_entropy(logits, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax."""
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(
            f"cross_entropy needs (N, V) logits with (N,) targets, got "
            f"{logits.shape} and {targets.shape}"
        )
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise ValueError(f"targets out of range [0, {logits.shape[1]})")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    sum_e = e.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sum_e)
    data = -log_probs[np.arange(n), targets].mean()

    def backward(g):
        p = e / sum_e
        p[np.arange(n), targets] -= 1.0
        logits.accumulate_grad(p * (float(g) / n))

    return _make("cross_entropy", np.asarray(data), (logits,), backward)
