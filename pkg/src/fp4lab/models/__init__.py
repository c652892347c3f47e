"""Desk-scale transformer pair (GPT baseline and its hypersphere-normalized
variant) on the autodiff substrate, with AdamW, training driver, and
checkpoint io."""

from .checkpoint import build_model, load_checkpoint, load_model, save_checkpoint
from .config import ModelConfig
from .core import BaseModel, Param, apply_rope, rope_tables
from .gpt import GPTModel
from .metrics import relative_error
from .ngpt import NGPTModel
from .optim import AdamW
from .trainer import Trainer

__all__ = [
    "AdamW",
    "BaseModel",
    "GPTModel",
    "ModelConfig",
    "NGPTModel",
    "Param",
    "Trainer",
    "apply_rope",
    "build_model",
    "load_checkpoint",
    "load_model",
    "relative_error",
    "rope_tables",
    "save_checkpoint",
]
