"""Evaluation harness: metrics, trend protocol, window sweep and reports."""

from .harness import NvdCase, StaticEval, evaluate_plan, evaluate_static, evaluate_triage, load_nvd_cases
from .metrics import (
    STABLE_BAND,
    Direction,
    canonical_item,
    dir_acc,
    direction,
    directions,
    f1_set,
    kendall_tau,
    ndcg_at_k,
    rmse,
)
from .sweep import SweepCase, SweepRow, TrendScore, evaluate_forecasts, load_dilution_case, window_sweep
from .trends import ForecastCase, Trend, TrendParams, classify_trend, generate_series, synthetic_forecast_cases

__all__ = [
    "STABLE_BAND", "Direction", "ForecastCase", "NvdCase", "StaticEval", "SweepCase", "SweepRow", "Trend",
    "TrendParams", "TrendScore", "canonical_item", "classify_trend", "dir_acc", "direction", "directions",
    "evaluate_forecasts", "evaluate_plan", "evaluate_static", "evaluate_triage", "f1_set", "generate_series",
    "kendall_tau", "load_dilution_case", "load_nvd_cases", "ndcg_at_k", "rmse", "synthetic_forecast_cases",
    "window_sweep",
]
