"""Automatic AR tuning: differencing by stationarity vote, lookback by BIC.

The full-data workflow runs three steps on a (standardized) training split:

1. KPSS test per channel; first differences when a majority rejects.
2. One pooled least-squares fit per candidate lookback, scored by BIC.
3. The model refit at the BIC-minimizing lookback (ties favor the
   smallest) is returned for recursive forecasting.

The zero-shot variant applies the same three steps when all that exists is
a single context window of length L: the window is segmented into the
L - W + 1 rolling subwindows of size W < L, and those subwindows form the
training multiset.  Since consecutive subwindows overlap, the pooled design
is equivalent to a multiplicity-weighted regression on the full context,
which is how it is computed here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import armodel
from .armodel import ArModel
from .dataio import MultiChannelSeries
from .stattests import KPSS_CRITICAL_VALUES, decide_differencing, kpss_level_batch

__all__ = [
    "AutoArConfig",
    "SelectionResult",
    "run_auto_ar",
    "run_untuned_ar",
    "run_zero_shot",
    "zero_shot_model",
    "DEFAULT_LOOKBACK_GRID",
    "DEFAULT_ZERO_SHOT_GRID",
]

# Log-spaced small orders plus the customary long context lengths.
DEFAULT_LOOKBACK_GRID = (1, 2, 4, 8, 16, 32, 64, 96, 128, 192, 256, 384, 512)
DEFAULT_ZERO_SHOT_GRID = (64, 96, 128, 192)


def _normalized_grid(grid, what: str) -> tuple[int, ...]:
    out = tuple(sorted({int(p) for p in grid}))
    if not out:
        raise ValueError(f"{what} must not be empty")
    if out[0] < 1:
        raise ValueError(f"{what} entries must be positive, got {out[0]}")
    return out


@dataclass(frozen=True)
class AutoArConfig:
    """Settings for the tuning pipeline.

    ``lookback_grid`` is normalized to a sorted, duplicate-free tuple and
    must stay within ``max_lookback``.  ``force_d`` bypasses the
    stationarity vote when set.  The zero-shot fields control the
    rolling-window variant: subwindow size ``zero_shot_window`` (W) and its
    reduced lookback grid, whose entries must be smaller than W.
    """

    max_lookback: int = 512
    lookback_grid: tuple[int, ...] = DEFAULT_LOOKBACK_GRID
    kpss_significance: float = 0.05
    include_intercept: bool = True
    force_d: int | None = None
    zero_shot: bool = False
    zero_shot_window: int = 256
    zero_shot_grid: tuple[int, ...] = DEFAULT_ZERO_SHOT_GRID

    def __post_init__(self):
        if self.max_lookback < 1:
            raise ValueError(f"max_lookback must be positive, got {self.max_lookback}")
        grid = _normalized_grid(self.lookback_grid, "lookback_grid")
        if grid[-1] > self.max_lookback:
            raise ValueError(
                f"lookback grid reaches {grid[-1]} beyond max_lookback={self.max_lookback}"
            )
        object.__setattr__(self, "lookback_grid", grid)
        if self.kpss_significance not in KPSS_CRITICAL_VALUES:
            raise ValueError(
                f"kpss_significance must be one of {sorted(KPSS_CRITICAL_VALUES)}, "
                f"got {self.kpss_significance}"
            )
        if self.force_d not in (None, 0, 1):
            raise ValueError(f"force_d must be None, 0 or 1, got {self.force_d}")
        zs_grid = _normalized_grid(self.zero_shot_grid, "zero_shot_grid")
        if self.zero_shot_window < 10:
            raise ValueError(
                f"zero_shot_window must be at least 10, got {self.zero_shot_window}"
            )
        if zs_grid[-1] >= self.zero_shot_window:
            raise ValueError(
                f"zero-shot grid entry {zs_grid[-1]} must be smaller than the "
                f"subwindow size W={self.zero_shot_window}"
            )
        object.__setattr__(self, "zero_shot_grid", zs_grid)


@dataclass(frozen=True)
class SelectionResult:
    """Differencing decision and lookback search record.

    ``bic_by_p`` maps every feasible candidate to its BIC; ``chosen_p`` is
    its argmin with ties broken toward the smallest lookback.  ``skipped``
    lists grid entries that were infeasible for the training length.
    """

    chosen_p: int
    d: int
    bic_by_p: dict[int, float]
    per_channel_reject: tuple[bool, ...] = ()
    skipped: tuple[int, ...] = ()


def _select_over_grid(fit_one, grid, cap: int):
    """Fit every feasible candidate and keep the BIC argmin (smallest on ties)."""
    feasible = [p for p in grid if p <= cap]
    skipped = tuple(p for p in grid if p > cap)
    if skipped:
        warnings.warn(
            f"skipping infeasible lookbacks {list(skipped)} (limit {cap} "
            f"for this training length)",
            RuntimeWarning,
            stacklevel=3,
        )
    if not feasible:
        raise ValueError(
            f"no feasible lookback: grid {list(grid)} vs limit {cap}"
        )
    bic_by_p: dict[int, float] = {}
    best = None
    for p in feasible:
        model, diag = fit_one(p)
        bic_by_p[p] = diag.bic
        if best is None or diag.bic < best[2]:
            best = (model, p, diag.bic)
    model, chosen_p, _ = best
    return model, chosen_p, bic_by_p, skipped


def run_auto_ar(train: MultiChannelSeries,
                config: AutoArConfig | None = None) -> tuple[ArModel, SelectionResult]:
    """Tune and fit an AR model on a training split.

    The split should already be standardized; the stationarity vote, the
    BIC search and the final fit all use only these rows.

    Returns the fitted model together with the selection record.
    """
    config = config or AutoArConfig()
    if config.force_d is not None:
        d = config.force_d
        per_channel = ()
    else:
        decision = decide_differencing(train, config.kpss_significance)
        d = decision.d
        per_channel = decision.per_channel_reject
    cap = min(config.max_lookback, train.t_len - d - 1)
    model, chosen_p, bic_by_p, skipped = _select_over_grid(
        lambda p: armodel.fit(train, p, d, include_intercept=config.include_intercept),
        config.lookback_grid,
        cap,
    )
    return model, SelectionResult(
        chosen_p=chosen_p, d=d, bic_by_p=bic_by_p,
        per_channel_reject=per_channel, skipped=skipped,
    )


def run_untuned_ar(train: MultiChannelSeries, p: int = 512, *,
                   include_intercept: bool = True) -> ArModel:
    """The fixed-lookback, no-differencing baseline: AR(p) with d = 0."""
    model, _ = armodel.fit(train, p, 0, include_intercept=include_intercept)
    return model


def _window_multiplicity(m_len: int, p: int, big_l: int, big_w: int, d: int) -> np.ndarray:
    """How many size-W subwindows contain each one-step sample.

    ``m_len`` is the differenced context length L - d.  The sample whose
    target sits at differenced index t (lags t-p .. t-1) lies inside the
    subwindow starting at s iff s <= t - p and t <= s + W - d - 1.
    """
    t = np.arange(p, m_len)
    lo = np.maximum(0, t - (big_w - d - 1))
    hi = np.minimum(big_l - big_w, t - p)
    return np.maximum(0, hi - lo + 1).astype(np.float64)


def _zero_shot_differencing(values: np.ndarray, big_w: int, significance: float):
    """Majority KPSS vote over every (channel, subwindow) fragment."""
    n_windows = values.shape[0] - big_w + 1
    reject_total = 0
    per_channel = []
    for c in range(values.shape[1]):
        frags = np.lib.stride_tricks.sliding_window_view(values[:, c], big_w)
        _, rejects, _, _ = kpss_level_batch(frags, significance=significance)
        n_rej = int(rejects.sum())
        reject_total += n_rej
        per_channel.append(n_rej >= math.ceil(n_windows / 2))
    total = values.shape[1] * n_windows
    d = 1 if reject_total >= math.ceil(total / 2) else 0
    return d, tuple(per_channel)


def zero_shot_model(context: MultiChannelSeries,
                    config: AutoArConfig) -> tuple[ArModel, SelectionResult]:
    """Tune and fit an AR model from a single context window.

    The context of length L is segmented into L - W + 1 rolling subwindows
    of size ``W = config.zero_shot_window``; each (channel, subwindow)
    fragment is one training series and the three tuning steps run on that
    multiset, with the lookback search restricted to
    ``config.zero_shot_grid``.
    """
    if not config.zero_shot:
        raise ValueError("zero-shot mode requires config.zero_shot = True")
    big_l = context.t_len
    big_w = config.zero_shot_window
    if big_l <= big_w:
        raise ValueError(
            f"context length L={big_l} must exceed the subwindow size W={big_w}"
        )
    if config.force_d is not None:
        d = config.force_d
        per_channel = ()
    else:
        d, per_channel = _zero_shot_differencing(
            context.values, big_w, config.kpss_significance
        )
    diffed = np.diff(context.values, axis=0) if d == 1 else context.values
    m_len = diffed.shape[0]
    columns = [np.ascontiguousarray(diffed[:, c]) for c in range(diffed.shape[1])]

    def fit_one(p: int):
        weights = _window_multiplicity(m_len, p, big_l, big_w, d)
        intercept, coeffs, rss, n_eff = armodel._pooled_lstsq(
            columns, p, config.include_intercept, weights=[weights] * len(columns)
        )
        diag = armodel._diagnostics(rss, n_eff, p, config.include_intercept)
        model = ArModel(
            intercept=intercept, coeffs=coeffs, d=d,
            noise_var=rss / n_eff, n_train_samples=int(n_eff),
            channel_names=context.channel_names,
        )
        return model, diag

    cap = big_w - d - 1
    model, chosen_p, bic_by_p, skipped = _select_over_grid(
        fit_one, config.zero_shot_grid, cap
    )
    return model, SelectionResult(
        chosen_p=chosen_p, d=d, bic_by_p=bic_by_p,
        per_channel_reject=per_channel, skipped=skipped,
    )


def run_zero_shot(context: MultiChannelSeries, config: AutoArConfig,
                  horizon: int) -> np.ndarray:
    """Zero-shot forecast: tune on the context's subwindows, then predict.

    Returns the (horizon, C) matrix of forecasts issued from the end of the
    full context.
    """
    model, _ = zero_shot_model(context, config)
    return armodel.forecast(model, context, horizon)
