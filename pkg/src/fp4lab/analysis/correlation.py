"""Term-level statistics of dot products: z-scores and effective correlation.

A dot product y = sum_k w_k x_k over D terms has signal terms s_k = w_k x_k
and, under quantization, noise terms n_k = what_k xhat_k - s_k. The scaled
sums

    z_s = |sum_k s_k| / (sqrt(D) * sigma_s)
    z_n = |sum_k n_k| / (sqrt(D) * sigma_s)

share the sqrt(D) sigma_s denominator (sigma_s is the unbiased standard
deviation of the signal terms), so (z_s / z_n)^2 equals the empirical dot
SNR (sum s)^2 / (sum n)^2 exactly.

The effective correlation of a term matrix U (samples, D), variances taken
across samples, is

    rho = (Var(sum_k u_k) / sum_k Var(u_k) - 1) / (D - 1)

which equals the covariance-weighted average of all pairwise Pearson
correlations and lives in [-1/(D-1), 1]. Constant columns carry no
correlation information and are dropped (the count is reported); constancy
is detected as zero range rather than zero computed variance, because the
two-pass variance of a constant column can round to ~1e-29 instead of 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..fpquant import QuantConfig, fake_quant_along


@dataclass(frozen=True)
class SignalNoiseStats:
    """Term statistics of one output element's dot product."""

    d: int
    z_s: float
    z_n: float
    sum_s: float
    sum_n: float
    s_bar: float
    n_bar: float
    sigma_s: float
    sigma_n: float

    @property
    def snr_dot(self) -> float:
        """Empirical dot SNR (sum s)^2 / (sum n)^2; inf for zero noise sum."""
        if self.sum_n == 0.0:
            return math.inf
        return (self.sum_s / self.sum_n) ** 2

    def record(self) -> dict:
        return {
            "d": self.d,
            "z_s": self.z_s,
            "z_n": self.z_n,
            "sum_s": self.sum_s,
            "sum_n": self.sum_n,
            "s_bar": self.s_bar,
            "n_bar": self.n_bar,
            "sigma_s": self.sigma_s,
            "sigma_n": self.sigma_n,
        }


def signal_noise(w_row: np.ndarray, x_col: np.ndarray, cfg: QuantConfig | None,
                 w_hat: np.ndarray | None = None,
                 x_hat: np.ndarray | None = None) -> SignalNoiseStats:
    """z-scores and term moments for one dot product w_row . x_col.

    Both vectors are 1-D with D >= 2 entries. When cfg is given the vectors
    are quantized here (blocks along their only axis); precomputed w_hat and
    x_hat override that, which matters when the vectors are slices of larger
    tensors whose per-tensor scale was fit jointly.
    """
    w_row = np.asarray(w_row, dtype=np.float64)
    x_col = np.asarray(x_col, dtype=np.float64)
    if w_row.ndim != 1 or x_col.ndim != 1 or w_row.shape != x_col.shape:
        raise ValueError(
            f"signal_noise needs matching 1-D vectors, got {w_row.shape} and {x_col.shape}")
    d = w_row.shape[0]
    if d < 2:
        raise ValueError("signal_noise needs at least 2 terms")
    if w_hat is None:
        w_hat = w_row if cfg is None else fake_quant_along(w_row, cfg, axis=-1)
    if x_hat is None:
        x_hat = x_col if cfg is None else fake_quant_along(x_col, cfg, axis=-1)

    s = w_row * x_col
    n = np.asarray(w_hat, dtype=np.float64) * np.asarray(x_hat, dtype=np.float64) - s
    sigma_s = float(np.std(s, ddof=1))
    if sigma_s == 0.0:
        raise ValueError("signal_noise: signal terms have zero variance")
    denom = math.sqrt(d) * sigma_s
    sum_s = float(np.sum(s))
    sum_n = float(np.sum(n))
    return SignalNoiseStats(
        d=d,
        z_s=abs(sum_s) / denom,
        z_n=abs(sum_n) / denom,
        sum_s=sum_s,
        sum_n=sum_n,
        s_bar=float(np.mean(s)),
        n_bar=float(np.mean(n)),
        sigma_s=sigma_s,
        sigma_n=float(np.std(n, ddof=1)),
    )


@dataclass(frozen=True)
class EffectiveCorrelation:
    """Effective correlation of a term matrix plus bookkeeping."""

    rho: float
    d_used: int
    dropped: int
    var_of_sum: float
    sum_of_var: float

    def record(self) -> dict:
        return {
            "rho": self.rho,
            "d_used": self.d_used,
            "dropped": self.dropped,
            "var_of_sum": self.var_of_sum,
            "sum_of_var": self.sum_of_var,
        }


def effective_correlation_stats(u: np.ndarray) -> EffectiveCorrelation:
    """Effective correlation across the columns of U (samples, D)."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"effective_correlation needs a 2-D matrix, got shape {u.shape}")
    samples, d = u.shape
    if samples < 2:
        raise ValueError("effective_correlation needs at least 2 samples")
    keep = np.ptp(u, axis=0) > 0.0
    dropped = int(d - np.count_nonzero(keep))
    if dropped:
        u = u[:, keep]
    d_used = u.shape[1]
    if d_used < 2:
        raise ValueError(
            f"effective_correlation needs >= 2 varying columns, kept {d_used} of {d}")
    col_var = np.var(u, axis=0, ddof=1)
    var_of_sum = float(np.var(np.sum(u, axis=1), ddof=1))
    sum_of_var = float(np.sum(col_var))
    if sum_of_var == 0.0:
        raise ValueError("effective_correlation: column variances underflowed to zero")
    rho = (var_of_sum / sum_of_var - 1.0) / (d_used - 1)
    return EffectiveCorrelation(rho=rho, d_used=d_used, dropped=dropped,
                                var_of_sum=var_of_sum, sum_of_var=sum_of_var)


def effective_correlation(u: np.ndarray) -> float:
    """Scalar effective correlation (see effective_correlation_stats)."""
    return effective_correlation_stats(u).rho


@dataclass(frozen=True)
class PartialSumCurve:
    """rho(k) over prefixes of the term matrix, with flatness summary."""

    ks: tuple
    rhos: tuple
    median: float
    max_abs_dev: float

    def record_rows(self) -> list:
        return [{"k": k, "rho": r} for k, r in zip(self.ks, self.rhos)]


def partial_sum_correlation(u: np.ndarray, k_grid) -> PartialSumCurve:
    """Effective correlation of the first k columns for each k in k_grid.

    Reports the curve plus the maximum absolute deviation from its median,
    the flatness statistic for checking scale independence of rho.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"partial_sum_correlation needs a 2-D matrix, got shape {u.shape}")
    ks = tuple(int(k) for k in k_grid)
    if not ks:
        raise ValueError("partial_sum_correlation needs a non-empty k grid")
    for k in ks:
        if k < 2 or k > u.shape[1]:
            raise ValueError(f"k={k} outside [2, {u.shape[1]}]")
    rhos = tuple(effective_correlation(u[:, :k]) for k in ks)
    med = float(np.median(rhos))
    max_dev = float(max(abs(r - med) for r in rhos))
    return PartialSumCurve(ks=ks, rhos=rhos, median=med, max_abs_dev=max_dev)


@dataclass(frozen=True)
class CorrelationStats:
    """Layer-level bundle: pooled signal/noise correlations and rho(k)."""

    rho_s: float
    rho_n: float
    rho_s_per_output: tuple
    rho_n_per_output: tuple
    curve: PartialSumCurve | None = None

    def record(self) -> dict:
        row = {
            "rho_s": self.rho_s,
            "rho_n": self.rho_n,
            "n_outputs": len(self.rho_s_per_output),
        }
        if self.curve is not None:
            row["rho_k_median"] = self.curve.median
            row["rho_k_max_abs_dev"] = self.curve.max_abs_dev
        return row
