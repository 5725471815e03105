"""Tuned linear autoregression for long-horizon time series forecasting.

The package provides the data plumbing (loading, splitting, standardizing),
a KPSS-based differencing decision, pooled least-squares AR fitting with
recursive forecasting, an automatic tuning pipeline (differencing vote +
BIC lookback search), a zero-shot variant that trains on rolling subwindows
of a single context, and a rolling-window benchmark harness with aggregate
reporting against published reference results.
"""

from .armodel import ArModel, FitDiagnostics, fit, forecast, load_model, save_model
from .bench import (
    AggregateReport,
    EvalRecord,
    ForecastTask,
    MethodAggregate,
    aggregate,
    evaluate,
    load_reference_results,
    prepare,
    reference_results_path,
)
from .dataio import (
    DATASET_PRESETS,
    MultiChannelSeries,
    Scaler,
    SplitSpec,
    apply_scaler,
    fit_scaler,
    load_csv,
    split,
    subsample_train,
)
from .pipeline import (
    AutoArConfig,
    SelectionResult,
    run_auto_ar,
    run_untuned_ar,
    run_zero_shot,
    zero_shot_model,
)
from .stattests import (
    DifferencingDecision,
    KpssResult,
    decide_differencing,
    difference,
    integrate,
    kpss_level,
)

__version__ = "0.1.0"

__all__ = [
    "ArModel",
    "FitDiagnostics",
    "fit",
    "forecast",
    "load_model",
    "save_model",
    "AggregateReport",
    "EvalRecord",
    "ForecastTask",
    "MethodAggregate",
    "aggregate",
    "evaluate",
    "load_reference_results",
    "prepare",
    "reference_results_path",
    "DATASET_PRESETS",
    "MultiChannelSeries",
    "Scaler",
    "SplitSpec",
    "apply_scaler",
    "fit_scaler",
    "load_csv",
    "split",
    "subsample_train",
    "AutoArConfig",
    "SelectionResult",
    "run_auto_ar",
    "run_untuned_ar",
    "run_zero_shot",
    "zero_shot_model",
    "DifferencingDecision",
    "KpssResult",
    "decide_differencing",
    "difference",
    "integrate",
    "kpss_level",
]
