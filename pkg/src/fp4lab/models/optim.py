"""AdamW with decoupled weight decay.

Update order follows the common convention: shrink the parameter by
lr * weight_decay first (decay-eligible parameters only), then apply the
bias-corrected moment step p -= lr * m_hat / (sqrt(v_hat) + eps). Parameters
whose gradient is absent are skipped entirely; a present all-zero gradient
still updates the moments and applies decay.
"""

from __future__ import annotations

import numpy as np

from .core import Param


class AdamW:
    def __init__(self, params: list[Param], lr: float,
                 betas: tuple[float, float] = (0.9, 0.95), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {p.name: np.zeros_like(p.tensor.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.tensor.data) for p in self.params}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else float(lr)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                continue
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            w = p.tensor.data
            if p.decay and self.weight_decay:
                w -= lr * self.weight_decay * w
            w -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for prefix, store in (("m.", self.m), ("v.", self.v)):
            for name in store:
                arr = np.asarray(arrays[prefix + name], dtype=np.float64)
                if arr.shape != store[name].shape:
                    raise ValueError(
                        f"optimizer moment {prefix}{name}: shape {arr.shape} != "
                        f"{store[name].shape}"
                    )
                store[name] = arr.copy()
        self.t = int(t)
