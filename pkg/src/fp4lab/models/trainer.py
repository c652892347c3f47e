"""One-step training driver: loss, backward, AdamW, renormalization.

The learning-rate warmup is linear in samples (sequences) consumed, counting
the current batch, then constant at the configured rate. Architectures that
renormalize weights do so immediately after the optimizer step, so a model is
always on its constraint set between steps.
"""

from __future__ import annotations

import numpy as np

from ..tensorcore import Tape, cross_entropy
from .core import BaseModel
from .optim import AdamW


class Trainer:
    def __init__(self, model: BaseModel):
        cfg = model.cfg
        self.model = model
        self.opt = AdamW(model.params(), lr=cfg.lr, betas=cfg.betas,
                         weight_decay=cfg.weight_decay)
        self.samples_seen = 0

    def current_lr(self, batch_size: int) -> float:
        cfg = self.model.cfg
        if cfg.warmup_samples > 0:
            frac = min(1.0, (self.samples_seen + batch_size) / cfg.warmup_samples)
            return cfg.lr * frac
        return cfg.lr

    def train_step(self, inputs, targets) -> float:
        """One forward/backward/update on a (B, T) batch; returns the loss."""
        inputs = np.asarray(inputs)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        batch = inputs.shape[0]
        targets = np.asarray(targets).reshape(-1)

        with Tape() as tape:
            logits, _ = self.model.forward(inputs)
            loss = cross_entropy(logits, targets)
        tape.backward(loss)

        self.opt.step(lr=self.current_lr(batch))
        self.opt.zero_grad()
        renorm = getattr(self.model, "renormalize_weights", None)
        if renorm is not None:
            renorm()
        self.model.step += 1
        self.samples_seen += batch
        return float(loss.data)
