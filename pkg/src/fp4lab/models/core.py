"""Shared model machinery: parameters, rotary phases, attention assembly.

Both architectures are token-in, logits-out transformers built from the same
four quantizable GEMMs per block (fused qkv, attention out-projection, fused
gate-up, down-projection) so that a quantization sweep touches the identical
set of matrix multiplies in each. Position information enters through rotary
phases on q and k, which adds no parameters and, being an orthogonal rotation
per position, preserves vector norms; that keeps the architectural diff
between the two models down to the normalization recipe itself.

Stochastic-rounding streams: every quantized GEMM call derives its own
sr_nonce from (base nonce, step counter, block index, gemm slot), and the
GEMM internally splits that into per-operand streams. Identical configs and
step counters therefore replay identical dither.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericsError
from ..fpquant import QuantConfig, mix_key
from ..tensorcore import (
    GemmTap,
    Tensor,
    add,
    bmm,
    causal_softmax,
    concat,
    cross_entropy,
    embedding,
    mul,
    narrow,
    reshape,
    sub,
    transpose,
)
from .config import ModelConfig

GEMM_SLOTS = ("qkv", "attn_out", "gate_up", "down")


@dataclass
class Param:
    """One trainable tensor plus its bookkeeping.

    norm_axis is the axis whose slices the normalized architecture pins to
    unit length after every optimizer step (the matrix's input axis); None
    marks the learnable scale vectors that stay unconstrained. decay gates
    decoupled weight decay (matrices yes, scale vectors no).
    """

    name: str
    tensor: Tensor
    norm_axis: int | None = None
    decay: bool = True


def rope_tables(seq_len: int, head_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Cos/sin phase tables shaped (seq_len, 1, head_dim // 2).

    Standard rotary frequencies: pair i of a head rotates with angular rate
    10000^(-2i/head_dim) per position.
    """
    half = head_dim // 2
    inv = 10000.0 ** (-2.0 * np.arange(half) / head_dim)
    ang = np.outer(np.arange(seq_len), inv)
    return np.cos(ang)[:, None, :], np.sin(ang)[:, None, :]


def apply_rope(x: Tensor, cos: Tensor, sin: Tensor) -> Tensor:
    """Rotate each (first-half, second-half) coordinate pair by its phase.

    x is (B, T, H, head_dim); cos/sin broadcast as (T, 1, half).
    """
    half = x.shape[-1] // 2
    x1 = narrow(x, 3, 0, half)
    x2 = narrow(x, 3, half, half)
    return concat(
        [sub(mul(x1, cos), mul(x2, sin)), add(mul(x2, cos), mul(x1, sin))],
        axis=3,
    )


class BaseModel:
    """Parameter registry plus the forward skeleton both architectures share."""

    arch = ""

    def __init__(self, cfg: ModelConfig):
        if cfg.arch != self.arch:
            raise ValueError(f"config arch {cfg.arch!r} does not match {self.arch!r}")
        self.cfg = cfg
        self.step = 0
        self._params: dict[str, Param] = {}
        self._rope_cos, self._rope_sin = rope_tables(cfg.seq_len, cfg.head_dim)
        self.last_norm_drift = 0.0
        self._build(np.random.default_rng(cfg.seed))

    # ------------------------------------------------------------ parameters

    def _add(self, name: str, data: np.ndarray, norm_axis: int | None = None,
             decay: bool = True) -> Tensor:
        t = Tensor(np.ascontiguousarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = Param(name, t, norm_axis, decay)
        return t

    def params(self) -> list[Param]:
        return list(self._params.values())

    def param(self, name: str) -> Param:
        return self._params[name]

    def p(self, name: str) -> Tensor:
        return self._params[name].tensor

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by name (copy before mutating)."""
        return {name: p.tensor.data for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = sorted(set(self._params) - set(arrays))
        extra = sorted(set(arrays) - set(self._params))
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing {missing}, extra {extra}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.tensor.data.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {arr.shape} != model shape "
                    f"{p.tensor.data.shape}"
                )
            p.tensor.data = np.ascontiguousarray(arr)

    # ------------------------------------------------------------ forward

    def _check_tokens(self, tokens) -> np.ndarray:
        ids = np.asarray(tokens)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.ndim != 2:
            raise ValueError(f"tokens must be (T,) or (B, T), got shape {ids.shape}")
        if ids.shape[1] > self.cfg.seq_len:
            raise ValueError(
                f"sequence length {ids.shape[1]} exceeds seq_len {self.cfg.seq_len}"
            )
        return ids

    def _qcfg(self, block: int, slot: int) -> QuantConfig | None:
        q = self.cfg.quant
        if q is None:
            return None
        return q.with_nonce(mix_key(q.sr_nonce, self.step, block, slot))

    def _rope_consts(self, t: int) -> tuple[Tensor, Tensor]:
        return Tensor(self._rope_cos[:t]), Tensor(self._rope_sin[:t])

    def _attention_context(self, q: Tensor, k: Tensor, v: Tensor, b: int, t: int,
                           cos: Tensor, sin: Tensor, score_scale: float,
                           qk_post=None) -> Tensor:
        """(N, d) q/k/v slices -> causal attention mix, flattened to (N, d)."""
        cfg = self.cfg
        h, dh = cfg.n_heads, cfg.head_dim
        q = apply_rope(reshape(q, (b, t, h, dh)), cos, sin)
        k = apply_rope(reshape(k, (b, t, h, dh)), cos, sin)
        if qk_post is not None:
            q, k = qk_post(q), qk_post(k)
        qh = transpose(q, (0, 2, 1, 3))
        kt = transpose(k, (0, 2, 3, 1))
        vh = transpose(reshape(v, (b, t, h, dh)), (0, 2, 1, 3))
        probs = causal_softmax(mul(bmm(qh, kt), score_scale))
        ctx = transpose(bmm(probs, vh), (0, 2, 1, 3))
        return reshape(ctx, (b * t, h * dh))

    def _block(self, hidden: Tensor, block: int, b: int, t: int, cos: Tensor,
               sin: Tensor, taps: list | None) -> Tensor:
        raise NotImplementedError

    def _head(self, hidden: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, tokens, taps: bool = False):
        """Token ids -> (logits (B*T, vocab), list of GEMM taps or None)."""
        ids = self._check_tokens(tokens)
        b, t = ids.shape
        self.last_norm_drift = 0.0
        tap_list: list[GemmTap] | None = [] if taps else None
        hidden = embedding(self.p("tok_emb"), ids.reshape(-1))
        cos, sin = self._rope_consts(t)
        for i in range(self.cfg.n_layers):
            try:
                hidden = self._block(hidden, i, b, t, cos, sin, tap_list)
            except NumericsError as e:
                raise NumericsError(f"block {i}: {e}") from e
        return self._head(hidden), tap_list

    def loss(self, inputs, targets) -> Tensor:
        """Mean next-token cross-entropy in nats per token."""
        logits, _ = self.forward(inputs)
        return cross_entropy(logits, np.asarray(targets).reshape(-1))
