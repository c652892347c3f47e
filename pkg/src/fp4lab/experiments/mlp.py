"""One-layer gated-MLP alignment experiment.

Task: next-byte prediction from a bag-of-recent-bytes embedding. A context
window of c bytes is embedded and mean-pooled into one d-vector, pushed
through a single gated-MLP block (the only quantized GEMMs), and projected
to byte logits. This is the simplest setting that exhibits the product
correlation statistic: the hidden GEMM's element-wise products are wide
enough for effective_correlation to mean something.

Two variants train under matched budgets:
  gpt   unconstrained weights, RMS-normalized input, weight decay
  ngpt  unit-norm weight slices (renormalized after every step), unit-norm
        input and hidden rows, learned per-unit scales on the gate, the
        pre-activation, and the logits

The task, width, and loss are harness choices (the alignment experiment's
source description leaves them open); reports label them as such.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError
from ..fpquant import QuantConfig, fake_quant_along
from ..analysis import effective_correlation
from ..models import AdamW, Param
from ..tensorcore import (
    Tape,
    Tensor,
    as_tensor,
    bmm,
    cross_entropy,
    embedding,
    mul,
    narrow,
    quant_matmul,
    reshape,
    rmsnorm,
    row_normalize,
    silu,
)

MLP_ARCHES = ("gpt", "ngpt")
MIN_WIDTH = 16


class OneLayerMLP:
    """Single gated-MLP block over mean-pooled byte embeddings."""

    def __init__(self, arch: str, width: int = 256, embed_dim: int = 64,
                 context: int = 8, vocab: int = 256, quant: QuantConfig | None = None,
                 seed: int = 0, init_std: float = 0.02):
        if arch not in MLP_ARCHES:
            raise ConfigError(f"arch must be one of {MLP_ARCHES}, got {arch!r}")
        if width < MIN_WIDTH:
            raise ConfigError(
                f"width must be >= {MIN_WIDTH} for meaningful correlation "
                f"statistics, got {width}")
        if embed_dim < 2 or context < 1:
            raise ConfigError("embed_dim must be >= 2 and context >= 1")
        self.arch = arch
        self.width = width
        self.embed_dim = embed_dim
        self.context = context
        self.vocab = vocab
        self.quant = quant
        self.step = 0
        rng = np.random.default_rng(seed)
        self._params: dict[str, Param] = {}
        self._add("emb", rng.normal(0.0, init_std, (vocab, embed_dim)), norm_axis=1)
        self._add("gate_up", rng.normal(0.0, init_std, (embed_dim, 2 * width)),
                  norm_axis=0)
        self._add("down", rng.normal(0.0, init_std, (width, vocab)), norm_axis=0)
        if arch == "ngpt":
            self._add("s_u", np.ones(width), decay=False)
            self._add("s_nu", np.ones(width), decay=False)
            self._add("s_z", np.full(vocab, 1.0 / math.sqrt(width)), decay=False)
            self.renormalize_weights()

    def _add(self, name, data, norm_axis=None, decay=True):
        t = Tensor(np.ascontiguousarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = Param(name, t, norm_axis, decay)

    def params(self):
        return list(self._params.values())

    def p(self, name):
        return self._params[name].tensor

    def state_arrays(self):
        return {k: p.tensor.data for k, p in self._params.items()}

    def renormalize_weights(self):
        if self.arch != "ngpt":
            return
        for p in self._params.values():
            if p.norm_axis is None:
                continue
            w = p.tensor.data
            norms = np.linalg.norm(w, axis=p.norm_axis, keepdims=True)
            if np.any(norms < 1e-30):
                raise ValueError(f"zero-norm slice in {p.name}")
            w /= norms

    def forward(self, windows, taps: bool = False):
        """(B, context) byte ids -> (logits (B, vocab), taps or None)."""
        ids = np.asarray(windows)
        if ids.ndim != 2 or ids.shape[1] != self.context:
            raise ValueError(f"windows must be (B, {self.context}), got {ids.shape}")
        b = ids.shape[0]
        tap_list = [] if taps else None
        e = embedding(self.p("emb"), ids.reshape(-1))
        e3 = reshape(e, (b, self.context, self.embed_dim))
        pool = as_tensor(np.full((b, 1, self.context), 1.0 / self.context))
        x = reshape(bmm(pool, e3), (b, self.embed_dim))

        if self.arch == "gpt":
            h = rmsnorm(x)
            g = quant_matmul(h, self.p("gate_up"), self.quant, tap_list, "mlp.gate_up")
            u = narrow(g, 1, 0, self.width)
            v = narrow(g, 1, self.width, self.width)
            core = mul(u, silu(v))
            logits = quant_matmul(core, self.p("down"), self.quant, tap_list,
                                  "mlp.down")
        else:
            h = row_normalize(x)
            g = quant_matmul(h, self.p("gate_up"), self.quant, tap_list, "mlp.gate_up")
            u = mul(narrow(g, 1, 0, self.width), self.p("s_u"))
            v = mul(narrow(g, 1, self.width, self.width),
                    mul(self.p("s_nu"), math.sqrt(self.embed_dim)))
            core = mul(u, silu(v))
            z = quant_matmul(row_normalize(core), self.p("down"), self.quant,
                             tap_list, "mlp.down")
            logits = mul(z, mul(self.p("s_z"), math.sqrt(self.width)))
        return logits, tap_list

    def loss(self, windows, targets):
        logits, _ = self.forward(windows)
        return cross_entropy(logits, np.asarray(targets).reshape(-1))


def train_mlp(model: OneLayerMLP, batches, steps: int, lr: float,
              weight_decay: float = 0.0) -> list:
    """Train for `steps` batches; returns the per-step loss trace."""
    opt = AdamW(model.params(), lr=lr, weight_decay=weight_decay)
    trace = []
    for _ in range(steps):
        windows, targets = next(batches)
        with Tape() as tape:
            loss = model.loss(windows, targets)
        tape.backward(loss)
        opt.step()
        opt.zero_grad()
        model.renormalize_weights()
        model.step += 1
        trace.append(float(loss.data))
    return trace


def product_correlations(model: OneLayerMLP, windows, qcfg: QuantConfig,
                         n_outputs: int = 32, seed: int = 0) -> tuple:
    """(rho_s, rho_n) of the down GEMM's element-wise products.

    Signal products come from the clean operands; noise products from
    quantizing both operands with qcfg (nearest rounding is forced so the
    statistic matches the forward pass).
    """
    from dataclasses import replace

    logits, taps = model.forward(windows, taps=True)
    tap = next(t for t in taps if t.name == "mlp.down")
    a, b = tap.a, tap.b  # (B, width), (width, vocab)
    qcfg = replace(qcfg, rounding="nearest")
    a_hat = fake_quant_along(a, qcfg, axis=-1)
    b_hat = fake_quant_along(b, qcfg, axis=0)
    rng = np.random.default_rng(seed)
    cols = rng.choice(b.shape[1], size=min(n_outputs, b.shape[1]), replace=False)
    rho_s, rho_n = [], []
    for j in cols:
        u_s = a * b[:, j]
        u_n = a_hat * b_hat[:, j] - u_s
        rho_s.append(effective_correlation(u_s))
        try:
            rho_n.append(effective_correlation(u_n))
        except ValueError:  # noise identically zero for this output
            rho_n.append(0.0)
    return float(np.mean(rho_s)), float(np.mean(rho_n))


def mlp_align(corpus, quant: QuantConfig | None, seeds, steps: int,
              batch_size: int, width: int = 256, embed_dim: int = 64,
              context: int = 8, n_outputs: int = 32,
              lr_gpt: float = 1.2e-3, lr_ngpt: float = 0.6e-3,
              wd_gpt: float = 0.1, arch_order=("gpt", "ngpt")) -> dict:
    """Train both one-layer variants per seed; returns traces and rhos.

    The report preserves arch_order, so swapping the labels swaps the
    grouped rows and nothing else.
    """
    arch_order = tuple(arch_order)
    if sorted(arch_order) != sorted(MLP_ARCHES):
        raise ConfigError(f"arch_order must be a permutation of {MLP_ARCHES}")
    qcfg = quant if quant is not None else QuantConfig()
    loss_rows, corr_rows = [], []
    final_loss = {}
    val_windows, _ = corpus.val_context_windows(512, context)
    for arch in arch_order:
        lr = lr_gpt if arch == "gpt" else lr_ngpt
        wd = wd_gpt if arch == "gpt" else 0.0
        for seed in seeds:
            model = OneLayerMLP(arch, width=width, embed_dim=embed_dim,
                                context=context, quant=quant, seed=seed)
            batches = corpus.context_batches(batch_size, context, seed)
            trace = train_mlp(model, batches, steps, lr=lr, weight_decay=wd)
            for step, loss in enumerate(trace, start=1):
                loss_rows.append({"arch": arch, "seed": seed,
                                  "step": step, "loss": loss})
            rho_s, rho_n = product_correlations(model, val_windows, qcfg,
                                                n_outputs=n_outputs, seed=seed)
            corr_rows.append({"arch": arch, "seed": seed,
                              "rho_s": rho_s, "rho_n": rho_n})
            final_loss[(arch, seed)] = trace[-1]
    return {"arch_order": arch_order, "loss_rows": loss_rows,
            "corr_rows": corr_rows, "final_loss": final_loss,
            "task": "next-byte prediction from a bag of recent bytes"}
