"""Loss comparison metrics."""

from __future__ import annotations


def relative_error(loss_quant: float, loss_baseline: float) -> float:
    """Signed relative loss gap (loss_quant - loss_baseline) / loss_baseline."""
    if not loss_baseline > 0:
        raise ValueError(f"baseline loss must be positive, got {loss_baseline}")
    return (loss_quant - loss_baseline) / loss_baseline
