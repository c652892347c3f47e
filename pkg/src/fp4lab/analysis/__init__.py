"""SNR, correlation, and regime analysis of quantized dot products."""

from .correlation import (
    CorrelationStats,
    EffectiveCorrelation,
    PartialSumCurve,
    SignalNoiseStats,
    effective_correlation,
    effective_correlation_stats,
    partial_sum_correlation,
    signal_noise,
)
from .snr import (
    SnrReport,
    averaging_gain,
    combine_reports,
    db,
    from_db,
    snr,
    snr_db,
    stage_snr,
)
from .theory import RegimeReport, predict_snr, snr_ratio_and_regimes

__all__ = [
    "CorrelationStats",
    "EffectiveCorrelation",
    "PartialSumCurve",
    "RegimeReport",
    "SignalNoiseStats",
    "SnrReport",
    "averaging_gain",
    "combine_reports",
    "db",
    "effective_correlation",
    "effective_correlation_stats",
    "from_db",
    "partial_sum_correlation",
    "predict_snr",
    "signal_noise",
    "snr",
    "snr_db",
    "snr_ratio_and_regimes",
    "stage_snr",
]
