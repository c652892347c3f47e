"""Stage-wise signal-to-noise measurement for quantized GEMMs.

SNR of a tensor against its quantized version is the ratio of squared L2
norms ||T||^2 / ||T - T_hat||^2. A GEMM W (m, D) @ X (D, n) is measured at
four stages: the weight entries, the activation entries, the D*m*n element
products W_ik * X_kj, and the m*n dot products (rows of W against columns of
X, accumulated in full precision from quantized products). Each stage pools
squared norms over the whole layer, giving one SNR per stage.

The products stage never materializes the (m, D, n) tensor. Both its norms
factor through the contraction index:

    sum_ikj (W_ik X_kj)^2            = sum_k (sum_i W_ik^2)(sum_j X_kj^2)
    sum_ikj (W_ik X_kj - What_ik Xhat_kj)^2
        = sum_k [ (sum_i W^2)(sum_j X^2) - 2 (sum_i W What)(sum_j X Xhat)
                  + (sum_i What^2)(sum_j Xhat^2) ]

Infinite SNR (zero quantization error) is represented as math.inf and flows
through the dB conversion as math.inf, never as a floating-point overflow.
The averaging gain (dot-stage dB minus products-stage dB) is nan when both
stages are infinite, since the difference is then undefined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..fpquant import QuantConfig, fake_quant_along


def db(linear: float) -> float:
    """Linear power ratio to decibels; inf maps to inf."""
    if math.isinf(linear):
        return math.inf
    return 10.0 * math.log10(linear)


def from_db(decibels: float) -> float:
    """Decibels back to a linear power ratio."""
    if math.isinf(decibels):
        return math.inf if decibels > 0 else 0.0
    return 10.0 ** (decibels / 10.0)


def snr(t: np.ndarray, t_hat: np.ndarray) -> float:
    """||T||^2 / ||T - T_hat||^2 as a linear ratio (inf for zero error)."""
    t = np.asarray(t, dtype=np.float64)
    t_hat = np.asarray(t_hat, dtype=np.float64)
    if t.shape != t_hat.shape:
        raise ValueError(f"snr shapes {t.shape} and {t_hat.shape} differ")
    sig = float(np.sum(t * t))
    if sig == 0.0:
        raise ValueError("snr of an all-zero tensor is undefined")
    err = t - t_hat
    noise = float(np.sum(err * err))
    if noise == 0.0:
        return math.inf
    return sig / noise


def snr_db(t: np.ndarray, t_hat: np.ndarray) -> float:
    return db(snr(t, t_hat))


def _gain_db(snr_dot: float, snr_products: float) -> float:
    if math.isinf(snr_dot) and math.isinf(snr_products):
        return math.nan
    return db(snr_dot) - db(snr_products)


@dataclass(frozen=True)
class SnrReport:
    """Per-stage linear SNRs of one GEMM (or a layer average; see combine)."""

    snr_weights: float
    snr_activations: float
    snr_products: float
    snr_dot: float
    layers: tuple = ()

    @property
    def snr_weights_db(self) -> float:
        return db(self.snr_weights)

    @property
    def snr_activations_db(self) -> float:
        return db(self.snr_activations)

    @property
    def snr_products_db(self) -> float:
        return db(self.snr_products)

    @property
    def snr_dot_db(self) -> float:
        return db(self.snr_dot)

    @property
    def averaging_gain_db(self) -> float:
        return _gain_db(self.snr_dot, self.snr_products)

    def record(self) -> dict:
        """Flat field dict for CSV writers."""
        return {
            "snr_weights": self.snr_weights,
            "snr_activations": self.snr_activations,
            "snr_products": self.snr_products,
            "snr_dot": self.snr_dot,
            "snr_weights_db": self.snr_weights_db,
            "snr_activations_db": self.snr_activations_db,
            "snr_products_db": self.snr_products_db,
            "snr_dot_db": self.snr_dot_db,
            "averaging_gain_db": self.averaging_gain_db,
        }


def stage_snr(w: np.ndarray, x: np.ndarray, cfg: QuantConfig | None,
              w_hat: np.ndarray | None = None,
              x_hat: np.ndarray | None = None) -> SnrReport:
    """Four-stage SNR of the GEMM w @ x under the given quantizer.

    w is (m, D), x is (D, n); both quantize along the contraction axis. Pass
    cfg None (or precomputed w_hat/x_hat) to skip quantization here; with cfg
    None and no hats every stage is infinite.
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2 or x.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ValueError(f"stage_snr shapes {w.shape} and {x.shape} do not align")
    if w_hat is None:
        w_hat = w if cfg is None else fake_quant_along(w, cfg, axis=-1)
    if x_hat is None:
        x_hat = x if cfg is None else fake_quant_along(x, cfg, axis=0)
    w_hat = np.asarray(w_hat, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)

    s_weights = snr(w, w_hat)
    s_acts = snr(x, x_hat)

    # products stage via the factored identity (see module docstring)
    w2 = np.sum(w * w, axis=0)
    x2 = np.sum(x * x, axis=1)
    ww = np.sum(w * w_hat, axis=0)
    xx = np.sum(x * x_hat, axis=1)
    wh2 = np.sum(w_hat * w_hat, axis=0)
    xh2 = np.sum(x_hat * x_hat, axis=1)
    sig = float(np.sum(w2 * x2))
    noise = float(np.sum(w2 * x2 - 2.0 * (ww * xx) + wh2 * xh2))
    if sig == 0.0:
        raise ValueError("stage_snr: all-zero products stage")
    # the three factored sums can cancel to a tiny negative residue when the
    # quantization error is at round-off scale; that means zero noise
    s_products = math.inf if noise <= 0.0 else sig / noise

    s_dot = snr(w @ x, w_hat @ x_hat)
    return SnrReport(s_weights, s_acts, s_products, s_dot)


def averaging_gain(report: SnrReport) -> float:
    """Eq.-6-style gain: dot-stage dB minus products-stage dB."""
    return report.averaging_gain_db


def combine_reports(reports) -> SnrReport:
    """Average each stage in dB across layers (the network-level summary)."""
    reports = tuple(reports)
    if not reports:
        raise ValueError("combine_reports needs at least one report")

    def mean_db_to_linear(values):
        dbs = [db(v) for v in values]
        if any(math.isinf(v) for v in dbs):
            return math.inf
        return from_db(float(np.mean(dbs)))

    return SnrReport(
        snr_weights=mean_db_to_linear(r.snr_weights for r in reports),
        snr_activations=mean_db_to_linear(r.snr_activations for r in reports),
        snr_products=mean_db_to_linear(r.snr_products for r in reports),
        snr_dot=mean_db_to_linear(r.snr_dot for r in reports),
        layers=reports,
    )
