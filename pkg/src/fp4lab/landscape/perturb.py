"""Loss-landscape flatness probe via Gaussian weight perturbation.

Every 2-D weight matrix W of a trained model receives independent Gaussian
noise with standard deviation alpha * ||W||_F / sqrt(n), where n is W's
entry count, so the relative perturbation energy is matched across matrices
of different sizes. 1-D gain and interpolation parameters are never
perturbed. The probe reports the validation loss increase over the clean
loss; evaluation always runs in full precision (quantization disabled) so
the deltas measure landscape geometry, not quantizer noise.

The degradation slope per architecture comes from a least-squares line
through the mean deltas at the smallest three nonzero alphas (the linear
response regime); slope_ratio is the baseline slope over the normalized
architecture's slope, so values above 1 mean the baseline degrades faster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..models import BaseModel, build_model


def eval_loss(model: BaseModel, val_data, batch_size: int = 8) -> float:
    """Mean validation loss (nats/token) over (inputs, targets) row batches."""
    inputs, targets = val_data
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if inputs.shape != targets.shape or inputs.ndim != 2:
        raise ValueError(
            f"val_data needs matching 2-D token arrays, got {inputs.shape} and {targets.shape}")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    rows = inputs.shape[0]
    total = 0.0
    for start in range(0, rows, batch_size):
        xb = inputs[start:start + batch_size]
        yb = targets[start:start + batch_size]
        total += float(model.loss(xb, yb).data) * xb.shape[0]
    return total / rows


def clean_eval_twin(state: BaseModel) -> BaseModel:
    """Full-precision copy of a model; shares no arrays with the source."""
    twin = build_model(replace(state.cfg, quant=None))
    twin.load_arrays({k: v.copy() for k, v in state.state_arrays().items()})
    return twin


def _perturb_matrices(model: BaseModel, alpha: float, seed: int) -> dict:
    """Add scaled Gaussian noise to every 2-D parameter; returns the originals."""
    arrays = model.state_arrays()
    saved = {}
    rng = np.random.default_rng(seed)
    for name in sorted(arrays):
        w = arrays[name]
        if w.ndim != 2:
            continue
        saved[name] = w.copy()
        std = alpha * float(np.linalg.norm(w)) / math.sqrt(w.size)
        w += rng.normal(0.0, 1.0, size=w.shape) * std
    return saved


def _restore_matrices(model: BaseModel, saved: dict) -> None:
    arrays = model.state_arrays()
    for name, orig in saved.items():
        arrays[name][...] = orig


def perturb_and_eval(state: BaseModel, alpha: float, seed: int, val_data,
                     batch_size: int = 8) -> float:
    """Validation loss increase after one Gaussian weight perturbation.

    The source state is never mutated; alpha = 0 returns exactly 0.0 because
    the zero-scaled noise leaves the evaluation bitwise identical.
    """
    if alpha < 0:
        raise ValueError("perturbation scale alpha must be >= 0")
    twin = clean_eval_twin(state)
    clean = eval_loss(twin, val_data, batch_size)
    saved = _perturb_matrices(twin, alpha, seed)
    try:
        return eval_loss(twin, val_data, batch_size) - clean
    finally:
        _restore_matrices(twin, saved)


@dataclass(frozen=True)
class LandscapeReport:
    """Perturbation curves for a baseline/normalized model pair."""

    alpha_grid: tuple
    seeds: tuple
    clean_loss_gpt: float
    clean_loss_ngpt: float
    deltas_gpt: tuple  # [alpha index][seed index]
    deltas_ngpt: tuple
    mean_delta_gpt: tuple
    mean_delta_ngpt: tuple
    std_delta_gpt: tuple
    std_delta_ngpt: tuple
    slope_gpt: float
    slope_ngpt: float
    slope_ratio: float
    clean_loss_mismatch: bool

    def record_rows(self) -> list:
        rows = []
        for arch, deltas in (("gpt", self.deltas_gpt), ("ngpt", self.deltas_ngpt)):
            for alpha, per_seed in zip(self.alpha_grid, deltas):
                for seed, delta in zip(self.seeds, per_seed):
                    rows.append({"arch": arch, "alpha": alpha,
                                 "seed": seed, "delta": delta})
        return rows


def _fit_slope(alphas, mean_deltas) -> float:
    """Least-squares slope over the smallest three nonzero-alpha points."""
    pairs = sorted((a, d) for a, d in zip(alphas, mean_deltas) if a > 0)
    pairs = pairs[:3]
    xs = np.array([p[0] for p in pairs])
    ys = np.array([p[1] for p in pairs])
    return float(np.polyfit(xs, ys, 1)[0])


def landscape_curve(gpt_state: BaseModel, ngpt_state: BaseModel, alpha_grid,
                    seeds, val_data, batch_size: int = 8) -> LandscapeReport:
    """Paired perturbation study of two trained models on shared noise seeds.

    Needs at least two nonzero alphas (one point cannot anchor a slope) and
    at least 10 seeds so the per-alpha means are stable. A clean-loss gap
    above 5% sets the mismatch flag but the comparison is still emitted.
    """
    alpha_grid = tuple(float(a) for a in alpha_grid)
    seeds = tuple(int(s) for s in seeds)
    if any(a < 0 for a in alpha_grid):
        raise ValueError("alpha grid must be non-negative")
    if sum(1 for a in alpha_grid if a > 0) < 2:
        raise ValueError("alpha grid needs at least two nonzero scales to fit a slope")
    if len(seeds) < 10:
        raise ValueError("landscape deltas need at least 10 noise seeds")

    twins = {"gpt": clean_eval_twin(gpt_state), "ngpt": clean_eval_twin(ngpt_state)}
    clean = {k: eval_loss(m, val_data, batch_size) for k, m in twins.items()}
    deltas = {}
    for key, twin in twins.items():
        per_alpha = []
        for alpha in alpha_grid:
            per_seed = []
            for seed in seeds:
                saved = _perturb_matrices(twin, alpha, seed)
                try:
                    per_seed.append(eval_loss(twin, val_data, batch_size) - clean[key])
                finally:
                    _restore_matrices(twin, saved)
            per_alpha.append(tuple(per_seed))
        deltas[key] = tuple(per_alpha)

    def stats(key):
        means = tuple(float(np.mean(row)) for row in deltas[key])
        stds = tuple(float(np.std(row, ddof=1)) if len(row) > 1 else 0.0
                     for row in deltas[key])
        return means, stds

    mean_g, std_g = stats("gpt")
    mean_n, std_n = stats("ngpt")
    slope_g = _fit_slope(alpha_grid, mean_g)
    slope_n = _fit_slope(alpha_grid, mean_n)
    gap = abs(clean["gpt"] - clean["ngpt"]) / min(clean["gpt"], clean["ngpt"])
    return LandscapeReport(
        alpha_grid=alpha_grid,
        seeds=seeds,
        clean_loss_gpt=clean["gpt"],
        clean_loss_ngpt=clean["ngpt"],
        deltas_gpt=deltas["gpt"],
        deltas_ngpt=deltas["ngpt"],
        mean_delta_gpt=mean_g,
        mean_delta_ngpt=mean_n,
        std_delta_gpt=std_g,
        std_delta_ngpt=std_n,
        slope_gpt=slope_g,
        slope_ngpt=slope_n,
        slope_ratio=slope_g / slope_n if slope_n != 0.0 else math.inf,
        clean_loss_mismatch=bool(gap > 0.05),
    )
