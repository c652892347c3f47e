"""Loss-landscape flatness probe and learning-rate sensitivity sweep."""

from .perturb import (
    LandscapeReport,
    clean_eval_twin,
    eval_loss,
    landscape_curve,
    perturb_and_eval,
)
from .sweep import (
    LrCell,
    LrSweepReport,
    SweepBudget,
    batch_stream,
    bits_per_byte,
    log_spaced_grid,
    lr_sweep,
)

__all__ = [
    "LandscapeReport",
    "LrCell",
    "LrSweepReport",
    "SweepBudget",
    "batch_stream",
    "bits_per_byte",
    "clean_eval_twin",
    "eval_loss",
    "landscape_curve",
    "log_spaced_grid",
    "lr_sweep",
    "perturb_and_eval",
]
