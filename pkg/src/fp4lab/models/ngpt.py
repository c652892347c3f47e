"""Hypersphere-normalized transformer.

The architectural diff against the GPT baseline, applied to the same block
skeleton:

  1. no RMSNorm layers anywhere;
  2. every weight matrix keeps unit-norm slices along its input axis,
     re-imposed after every optimizer step;
  3. residual updates become spherical interpolation steps
     h <- Norm(h + alpha * (Norm(branch) - h)) with learnable non-negative
     per-coordinate rates alpha for the attention and MLP branches;
  4. q and k are unit-normalized per head and rescaled by the learnable
     s_qk, with the softmax scale flipped to sqrt(head_dim);
  5. the MLP halves are rescaled by s_u and s_nu * sqrt(d_model) before the
     gate;
  6. logits are rescaled by the learnable s_z;
  7. no weight decay, no LR warmup (enforced by the config).

Learnable scale vectors use the (init, scale) reparameterization: the stored
parameter starts at `scale` and the forward pass multiplies by init/scale, so
the effective value starts at `init` while the parameter's gradient step size
is set by `scale`. Alpha vectors are read through an absolute value to keep
the effective rates non-negative.

Every GEMM input is normalized: the hidden state rides the unit sphere by
construction, and the attention mix and the gated MLP product are explicitly
normalized before their projections. Inputs to out-projection and
down-projection GEMMs are therefore unit-norm too, not just the block inputs.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericsError
from ..tensorcore import (
    Tensor,
    absval,
    add,
    matmul,
    mul,
    narrow,
    quant_matmul,
    reshape,
    row_normalize,
    silu,
    sub,
)
from .core import BaseModel

ALPHA_INIT = 0.05
SPHERE_TOL = 1e-6


class NGPTModel(BaseModel):
    arch = "ngpt"

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        d, f = cfg.d_model, cfg.ffn_dim
        std = cfg.init_std
        inv_sqrt_d = 1.0 / np.sqrt(d)
        self._add("tok_emb", rng.normal(0.0, std, (cfg.vocab_size, d)), norm_axis=1)
        for i in range(cfg.n_layers):
            self._add(f"blocks.{i}.qkv", rng.normal(0.0, std, (d, 3 * d)), norm_axis=0)
            self._add(f"blocks.{i}.attn_out", rng.normal(0.0, std, (d, d)), norm_axis=0)
            self._add(f"blocks.{i}.gate_up", rng.normal(0.0, std, (d, 2 * f)), norm_axis=0)
            self._add(f"blocks.{i}.down", rng.normal(0.0, std, (f, d)), norm_axis=0)
        self._add("head", rng.normal(0.0, std, (d, cfg.vocab_size)), norm_axis=0)
        for i in range(cfg.n_layers):
            self._add(f"blocks.{i}.alpha_attn", np.full(d, inv_sqrt_d), decay=False)
            self._add(f"blocks.{i}.alpha_mlp", np.full(d, inv_sqrt_d), decay=False)
            self._add(f"blocks.{i}.s_qk", np.full(d, inv_sqrt_d), decay=False)
            self._add(f"blocks.{i}.s_u", np.ones(f), decay=False)
            self._add(f"blocks.{i}.s_nu", np.ones(f), decay=False)
        self._add("s_z", np.full(cfg.vocab_size, inv_sqrt_d), decay=False)
        self.renormalize_weights()

    # stored * (init / scale); alpha_scale and s_qk/s_z scale are 1/sqrt(d)
    def _alpha_eff(self, name: str) -> Tensor:
        return absval(mul(self.p(name), ALPHA_INIT * np.sqrt(self.cfg.d_model)))

    def _lerp_norm(self, hidden: Tensor, branch: Tensor, alpha: Tensor) -> Tensor:
        return row_normalize(add(hidden, mul(sub(row_normalize(branch), hidden), alpha)))

    def _check_sphere(self, hidden: Tensor, block: int) -> None:
        norms = np.sqrt(np.sum(hidden.data * hidden.data, axis=-1))
        drift = float(np.max(np.abs(norms - 1.0)))
        self.last_norm_drift = max(self.last_norm_drift, drift)
        if drift > SPHERE_TOL:
            raise NumericsError(
                f"hidden norms drifted {drift:.3e} off the unit sphere "
                f"after block {block}"
            )

    def _block(self, hidden: Tensor, block: int, b: int, t: int, cos: Tensor,
               sin: Tensor, taps: list | None) -> Tensor:
        cfg = self.cfg
        d, f = cfg.d_model, cfg.ffn_dim
        sqrt_d = np.sqrt(d)

        qkv = quant_matmul(hidden, self.p(f"blocks.{block}.qkv"),
                           self._qcfg(block, 0), tap=taps,
                           name=f"blocks.{block}.qkv")
        sqk = reshape(mul(self.p(f"blocks.{block}.s_qk"), sqrt_d),
                      (cfg.n_heads, cfg.head_dim))
        ctx = self._attention_context(
            narrow(qkv, 1, 0, d), narrow(qkv, 1, d, d), narrow(qkv, 1, 2 * d, d),
            b, t, cos, sin, score_scale=np.sqrt(cfg.head_dim),
            qk_post=lambda x: mul(row_normalize(x), sqk),
        )
        att = quant_matmul(row_normalize(ctx), self.p(f"blocks.{block}.attn_out"),
                           self._qcfg(block, 1), tap=taps,
                           name=f"blocks.{block}.attn_out")
        hidden = self._lerp_norm(hidden, att, self._alpha_eff(f"blocks.{block}.alpha_attn"))

        gu = quant_matmul(hidden, self.p(f"blocks.{block}.gate_up"),
                          self._qcfg(block, 2), tap=taps,
                          name=f"blocks.{block}.gate_up")
        u = mul(narrow(gu, 1, 0, f), self.p(f"blocks.{block}.s_u"))
        nu = mul(narrow(gu, 1, f, f), mul(self.p(f"blocks.{block}.s_nu"), sqrt_d))
        core = mul(u, silu(nu))
        down = quant_matmul(row_normalize(core), self.p(f"blocks.{block}.down"),
                            self._qcfg(block, 3), tap=taps,
                            name=f"blocks.{block}.down")
        hidden = self._lerp_norm(hidden, down, self._alpha_eff(f"blocks.{block}.alpha_mlp"))

        self._check_sphere(hidden, block)
        return hidden

    def _head(self, hidden: Tensor) -> Tensor:
        sz = mul(self.p("s_z"), np.sqrt(self.cfg.d_model))
        return mul(matmul(hidden, self.p("head")), sz)

    def renormalize_weights(self) -> None:
        """Pin every matrix's input-axis slices back to unit norm in place."""
        for p in self._params.values():
            if p.norm_axis is None:
                continue
            w = p.tensor.data
            norms = np.sqrt(np.sum(w * w, axis=p.norm_axis, keepdims=True))
            if np.any(norms < 1e-30):
                raise NumericsError(f"zero-norm slice in {p.name}")
            w /= norms
