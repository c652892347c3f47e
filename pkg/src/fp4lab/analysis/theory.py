"""Closed-form SNR prediction and the three-regime dimension sweep.

For a dot product of D terms whose signal terms have per-term moments
(sigma_s, mu_S = sum mean) and effective correlation rho_s, and whose noise
terms are uncorrelated with moments (sigma_n, mu_N),

    SNR(D) = [D sigma_s^2 (1 + (D-1) rho_s) + mu_S^2] / [D sigma_n^2 + mu_N^2]

Dividing numerator and denominator by D before the ratio makes the
rho_s = 0, mu = 0 case reduce to exactly sigma_s^2 / sigma_n^2.

Comparing two architectures with signal correlations rho_n (normalized, the
larger) and rho_g (baseline) at matched noise gives the SNR ratio

    R(D) = (1 + D rho_n) / (1 + D rho_g)

using the large-D form of the bracket. R is monotone nondecreasing in D and
splits the axis into three half-open regimes at t1 = 1/rho_n and
t2 = 1/rho_g: both architectures mean-dominated (D < t1), the split regime
(t1 <= D < t2), and both variance-dominated (D >= t2) where R saturates at
rho_n / rho_g.
"""

from __future__ import annotations

from dataclasses import dataclass


def predict_snr(d: int, sigma_s: float, sigma_n: float,
                mu_s: float = 0.0, mu_n: float = 0.0,
                rho_s: float = 0.0) -> float:
    """Closed-form dot-product SNR for D terms (see module docstring)."""
    if d < 1:
        raise ValueError("predict_snr needs D >= 1")
    bracket = 1.0 + (d - 1) * rho_s
    if bracket < 0.0:
        raise ValueError(f"rho_s={rho_s} below the -1/(D-1) floor for D={d}")
    num = sigma_s * sigma_s * bracket + (mu_s * mu_s) / d
    den = sigma_n * sigma_n + (mu_n * mu_n) / d
    if den == 0.0:
        raise ValueError("predict_snr: zero noise power")
    return num / den


@dataclass(frozen=True)
class RegimeReport:
    """SNR-ratio curve over D with regime boundaries and saturation."""

    rho_n: float
    rho_g: float
    t1: float
    t2: float
    saturation: float
    d_values: tuple
    ratios: tuple
    regimes: tuple

    def ratio(self, d: float) -> float:
        return (1.0 + d * self.rho_n) / (1.0 + d * self.rho_g)

    def classify(self, d: float) -> str:
        if d < self.t1:
            return "I"
        if d < self.t2:
            return "II"
        return "III"

    def record_rows(self) -> list:
        return [{"d": d, "ratio": r, "regime": g}
                for d, r, g in zip(self.d_values, self.ratios, self.regimes)]


def snr_ratio_and_regimes(rho_n: float, rho_g: float, d_range) -> RegimeReport:
    """SNR ratio (1 + D rho_n)/(1 + D rho_g) over d_range, with regimes.

    Requires 0 < rho_g <= rho_n <= 1. Equal correlations are the degenerate
    case: the curve is identically 1 and every D lands in regime III.
    """
    if not (0.0 < rho_g <= rho_n <= 1.0):
        raise ValueError(
            f"need 0 < rho_g <= rho_n <= 1, got rho_n={rho_n} rho_g={rho_g}")
    t1 = 1.0 / rho_n
    t2 = 1.0 / rho_g
    report = RegimeReport(
        rho_n=rho_n, rho_g=rho_g, t1=t1, t2=t2,
        saturation=rho_n / rho_g,
        d_values=(), ratios=(), regimes=())
    d_values = tuple(float(d) for d in d_range)
    for d in d_values:
        if d <= 0:
            raise ValueError(f"D values must be positive, got {d}")
    ratios = tuple(report.ratio(d) for d in d_values)
    regimes = tuple(report.classify(d) for d in d_values)
    return RegimeReport(
        rho_n=rho_n, rho_g=rho_g, t1=t1, t2=t2,
        saturation=rho_n / rho_g,
        d_values=d_values, ratios=ratios, regimes=regimes)
