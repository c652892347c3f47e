"""Decoder-only transformer baseline.

Pre-norm blocks with gain-free RMSNorm, causal attention scaled by
1/sqrt(head_dim), and a gated-SiLU MLP. Residual projections (attention out,
MLP down) are initialized with the usual 1/sqrt(2 * n_layers) shrink so the
residual stream variance stays flat with depth. Embedding and output head
run unquantized; the four block GEMMs go through the quantization-aware
matmul when a quantizer config is present.
"""

from __future__ import annotations

import numpy as np

from ..tensorcore import Tensor, add, matmul, mul, narrow, quant_matmul, rmsnorm, silu
from .core import BaseModel


class GPTModel(BaseModel):
    arch = "gpt"

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        d, f = cfg.d_model, cfg.ffn_dim
        std = cfg.init_std
        res_std = std / np.sqrt(2.0 * cfg.n_layers)
        self._add("tok_emb", rng.normal(0.0, std, (cfg.vocab_size, d)), norm_axis=1)
        for i in range(cfg.n_layers):
            self._add(f"blocks.{i}.qkv", rng.normal(0.0, std, (d, 3 * d)), norm_axis=0)
            self._add(f"blocks.{i}.attn_out", rng.normal(0.0, res_std, (d, d)), norm_axis=0)
            self._add(f"blocks.{i}.gate_up", rng.normal(0.0, std, (d, 2 * f)), norm_axis=0)
            self._add(f"blocks.{i}.down", rng.normal(0.0, res_std, (f, d)), norm_axis=0)
        self._add("head", rng.normal(0.0, std, (d, cfg.vocab_size)), norm_axis=0)

    def _block(self, hidden: Tensor, block: int, b: int, t: int, cos: Tensor,
               sin: Tensor, taps: list | None) -> Tensor:
        cfg = self.cfg
        d, f = cfg.d_model, cfg.ffn_dim

        x = rmsnorm(hidden)
        qkv = quant_matmul(x, self.p(f"blocks.{block}.qkv"), self._qcfg(block, 0),
                           tap=taps, name=f"blocks.{block}.qkv")
        ctx = self._attention_context(
            narrow(qkv, 1, 0, d), narrow(qkv, 1, d, d), narrow(qkv, 1, 2 * d, d),
            b, t, cos, sin, score_scale=1.0 / np.sqrt(cfg.head_dim),
        )
        att = quant_matmul(ctx, self.p(f"blocks.{block}.attn_out"),
                           self._qcfg(block, 1), tap=taps,
                           name=f"blocks.{block}.attn_out")
        hidden = add(hidden, att)

        x = rmsnorm(hidden)
        gu = quant_matmul(x, self.p(f"blocks.{block}.gate_up"),
                          self._qcfg(block, 2), tap=taps,
                          name=f"blocks.{block}.gate_up")
        core = mul(narrow(gu, 1, 0, f), silu(narrow(gu, 1, f, f)))
        down = quant_matmul(core, self.p(f"blocks.{block}.down"),
                            self._qcfg(block, 3), tap=taps,
                            name=f"blocks.{block}.down")
        return add(hidden, down)

    def _head(self, hidden: Tensor) -> Tensor:
        return matmul(rmsnorm(hidden), self.p("head"))
