"""Learning-rate sensitivity sweep with bits-per-byte reporting.

Every (arch, precision, lr) cell trains from the same initialization seed
and the same batch stream, so cells differ only in the swept knobs. A cell
whose training or validation loss goes non-finite (or trips a numerics
guard) is recorded as divergent data, not raised as an error. Validation
runs in full precision; with byte-level tokenization BPB is loss / ln 2.

Set the FP4LAB_WORKERS environment variable above 1 to train cells in
parallel worker processes; results are identical to the serial order.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass, replace

import numpy as np

from ..errors import NumericsError
from ..fpquant import QuantConfig
from ..models import ModelConfig, Trainer, build_model
from .perturb import clean_eval_twin, eval_loss


def bits_per_byte(loss_nats_per_token: float, tokens_per_byte: float = 1.0) -> float:
    """Validation loss in bits per byte: loss / ln 2 * tokens_per_byte."""
    if loss_nats_per_token <= 0:
        raise ValueError("loss must be positive")
    if tokens_per_byte <= 0:
        raise ValueError("tokens_per_byte must be positive")
    return loss_nats_per_token / math.log(2.0) * tokens_per_byte


def log_spaced_grid(lo: float, hi: float, count: int) -> tuple:
    """Log-spaced grid with exact endpoints (so the span ratio is exact)."""
    if not (0 < lo < hi) or count < 2:
        raise ValueError("need 0 < lo < hi and count >= 2")
    grid = np.geomspace(lo, hi, count)
    grid[0], grid[-1] = lo, hi
    return tuple(float(v) for v in grid)


def batch_stream(inputs: np.ndarray, targets: np.ndarray, batch_size: int, seed: int):
    """Deterministic with-replacement row sampler shared by all sweep cells."""
    rng = np.random.default_rng(seed)
    rows = inputs.shape[0]
    while True:
        idx = rng.integers(0, rows, size=batch_size)
        yield inputs[idx], targets[idx]


@dataclass(frozen=True)
class SweepBudget:
    """Fixed training budget applied to every sweep cell."""

    steps: int
    batch_size: int
    seed: int = 0
    eval_batch_size: int = 8

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("sweep budget fields must be positive")


@dataclass(frozen=True)
class LrCell:
    """Outcome of one sweep cell."""

    arch: str
    precision: str
    lr: float
    bpb: float
    diverged: bool
    seed: int
    steps: int

    def record(self) -> dict:
        return {"arch": self.arch, "precision": self.precision, "lr": self.lr,
                "bpb": self.bpb, "diverged": self.diverged,
                "seed": self.seed, "steps": self.steps}


@dataclass(frozen=True)
class LrSweepReport:
    """All sweep cells plus the argmin lr per (arch, precision)."""

    lr_grid: tuple
    cells: tuple
    argmin_lr: dict

    def cells_for(self, arch: str, precision: str) -> tuple:
        return tuple(c for c in self.cells
                     if c.arch == arch and c.precision == precision)

    def bpb_spread(self, arch: str, precision: str) -> float | None:
        """max - min BPB over the configuration's non-divergent cells."""
        vals = [c.bpb for c in self.cells_for(arch, precision) if not c.diverged]
        if not vals:
            return None
        return max(vals) - min(vals)

    def record_rows(self) -> list:
        """One row per cell, restricted to the sweep CSV columns."""
        return [{"arch": c.arch, "precision": c.precision, "lr": c.lr,
                 "bpb": c.bpb, "diverged": c.diverged} for c in self.cells]


def _precision_label(quant) -> str:
    return "off" if quant is None else "nvfp4"


def _run_cell(args) -> dict:
    (cfg_dict, lr, budget, inputs, targets,
     val_inputs, val_targets, tokens_per_byte) = args
    cfg = ModelConfig.from_dict(cfg_dict)
    cfg = replace(cfg, lr=lr)
    model = build_model(cfg)
    trainer = Trainer(model)
    stream = batch_stream(inputs, targets, budget.batch_size, budget.seed)
    diverged = False
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(budget.steps):
            xb, yb = next(stream)
            try:
                loss = trainer.train_step(xb, yb)
            except NumericsError:
                diverged = True
                break
            if not math.isfinite(loss):
                diverged = True
                break
        bpb = math.inf
        if not diverged:
            try:
                val_loss = eval_loss(clean_eval_twin(model),
                                     (val_inputs, val_targets),
                                     budget.eval_batch_size)
            except NumericsError:
                val_loss = math.nan
            if math.isfinite(val_loss):
                bpb = bits_per_byte(val_loss, tokens_per_byte)
            else:
                diverged = True
    return {"arch": cfg.arch, "precision": _precision_label(cfg.quant),
            "lr": lr, "bpb": bpb, "diverged": diverged,
            "seed": budget.seed, "steps": budget.steps}


def lr_sweep(base_cfg: ModelConfig, arch_list, precision_list, lr_grid,
             budget: SweepBudget, train_data, val_data,
             tokens_per_byte: float = 1.0) -> LrSweepReport:
    """Train every (arch, precision, lr) cell under one fixed budget.

    precision_list entries are None (full precision) or a QuantConfig.
    Divergent cells are reported with bpb = inf and diverged = True. The
    per-configuration argmin lr considers only non-divergent cells and is
    None when every cell diverged.
    """
    lr_grid = tuple(float(lr) for lr in lr_grid)
    if not lr_grid:
        raise ValueError("lr grid must not be empty")
    if any(lr <= 0 for lr in lr_grid):
        raise ValueError("learning rates must be positive")
    arch_list = tuple(arch_list)
    precision_list = tuple(precision_list)
    if not arch_list or not precision_list:
        raise ValueError("need at least one arch and one precision")
    for quant in precision_list:
        if quant is not None and not isinstance(quant, QuantConfig):
            raise TypeError(f"precision entries are None or QuantConfig, got {type(quant)}")

    inputs, targets = (np.asarray(a) for a in train_data)
    val_inputs, val_targets = (np.asarray(a) for a in val_data)

    jobs = []
    for arch in arch_list:
        for quant in precision_list:
            cell_cfg = replace(base_cfg, arch=arch, quant=quant,
                               lr=None, weight_decay=None, warmup_samples=None,
                               seed=budget.seed)
            for lr in lr_grid:
                jobs.append((cell_cfg.to_dict(), lr, budget, inputs, targets,
                             val_inputs, val_targets, tokens_per_byte))

    workers = int(os.environ.get("FP4LAB_WORKERS", "1"))
    if workers > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(workers, len(jobs))) as pool:
            rows = pool.map(_run_cell, jobs)
    else:
        rows = [_run_cell(job) for job in jobs]

    cells = tuple(LrCell(**row) for row in rows)
    argmin: dict = {}
    for arch in arch_list:
        for quant in precision_list:
            key = (arch, _precision_label(quant))
            finite = [c for c in cells
                      if (c.arch, c.precision) == key and not c.diverged]
            argmin[key] = min(finite, key=lambda c: c.bpb).lr if finite else None
    return LrSweepReport(lr_grid=lr_grid, cells=cells, argmin_lr=argmin)
