"""Checkpoint io.

Layout: one .npz archive (zip of .npy arrays, each self-describing with dtype
and shape headers) holding

  meta            0-d unicode array with a JSON object:
                  {"format": 1, "config": <ModelConfig dict>, "step": int,
                   "adam_t": int | null, "samples_seen": int | null}
  p.<name>        one array per parameter
  m.<name>        first AdamW moment per parameter (when saved with a trainer)
  v.<name>        second AdamW moment per parameter (when saved with a trainer)

Parameter names and shapes must match the model rebuilt from the embedded
config, so checkpoints are portable across processes and implementations.
"""

from __future__ import annotations

import json

import numpy as np

from .config import ModelConfig
from .core import BaseModel
from .gpt import GPTModel
from .ngpt import NGPTModel
from .trainer import Trainer

CHECKPOINT_FORMAT = 1


def build_model(cfg: ModelConfig) -> BaseModel:
    return NGPTModel(cfg) if cfg.arch == "ngpt" else GPTModel(cfg)


def save_checkpoint(path, model: BaseModel, trainer: Trainer | None = None) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": model.cfg.to_dict(),
        "step": model.step,
        "adam_t": None if trainer is None else trainer.opt.t,
        "samples_seen": None if trainer is None else trainer.samples_seen,
    }
    arrays = {f"p.{name}": arr for name, arr in model.state_arrays().items()}
    if trainer is not None:
        arrays.update(trainer.opt.state_arrays())
    np.savez(path, meta=np.asarray(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> dict:
    """Raw checkpoint contents: config, step, params, and optimizer arrays."""
    with np.load(path) as z:
        meta = json.loads(str(z["meta"][()]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        params = {k[2:]: z[k] for k in z.files if k.startswith("p.")}
        moments = {k: z[k] for k in z.files if k.startswith(("m.", "v."))}
    return {
        "config": ModelConfig.from_dict(meta["config"]),
        "step": int(meta["step"]),
        "adam_t": meta["adam_t"],
        "samples_seen": meta["samples_seen"],
        "params": params,
        "moments": moments,
    }


def load_model(path) -> tuple[BaseModel, Trainer | None]:
    """Rebuild the model (and trainer, when moments were saved) from a file."""
    ck = load_checkpoint(path)
    model = build_model(ck["config"])
    model.load_arrays(ck["params"])
    model.step = ck["step"]
    if ck["adam_t"] is None:
        return model, None
    trainer = Trainer(model)
    trainer.opt.load_arrays(ck["moments"], t=ck["adam_t"])
    trainer.samples_seen = int(ck["samples_seen"])
    return model, trainer
