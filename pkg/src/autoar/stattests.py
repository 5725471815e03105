"""KPSS level-stationarity testing and first differencing.

The test statistic follows Kwiatkowski, Phillips, Schmidt & Shin (1992,
eqs. 10-11): with ``e`` the demeaned series and ``S_t`` its partial sums,

    eta = sum_t S_t**2 / T**2,    stat = eta / s2(l)

where ``s2(l)`` is the Bartlett-kernel long-run variance with truncation
lag ``l``.  The default bandwidth is Schwert's rule ``floor(12 * (T/100)**0.25)``
and the asymptotic critical values for the level-stationary null come from
Table 1 of the same paper.  Rejection of the null on a majority of channels
triggers one round of first differencing (d = 1); higher orders are out of
scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import MultiChannelSeries

__all__ = [
    "KPSS_CRITICAL_VALUES",
    "KpssResult",
    "DifferencingDecision",
    "kpss_level",
    "kpss_level_batch",
    "decide_differencing",
    "difference",
    "integrate",
]

# Asymptotic critical values for the level-stationarity null,
# Kwiatkowski et al. (1992), Table 1.
KPSS_CRITICAL_VALUES = {0.10: 0.347, 0.05: 0.463, 0.025: 0.574, 0.01: 0.739}

_MIN_LENGTH = 10


@dataclass(frozen=True)
class KpssResult:
    """Outcome of one KPSS level-stationarity test.

    ``degenerate`` marks a constant series, whose long-run variance is zero;
    it is reported as non-rejecting.
    """

    statistic: float
    bandwidth: int
    critical_value: float
    reject_stationarity: bool
    degenerate: bool = False


@dataclass(frozen=True)
class DifferencingDecision:
    """Majority differencing decision over the channels of a series."""

    d: int
    per_channel_reject: tuple[bool, ...]


def default_bandwidth(t_len: int) -> int:
    """Schwert-rule truncation lag, capped below the series length."""
    return min(int(12.0 * (t_len / 100.0) ** 0.25), t_len - 1)


def _critical_value(significance: float) -> float:
    try:
        return KPSS_CRITICAL_VALUES[significance]
    except KeyError:
        raise ValueError(
            f"significance must be one of {sorted(KPSS_CRITICAL_VALUES)}, got {significance}"
        ) from None


def kpss_level_batch(series_matrix: np.ndarray, significance: float = 0.05,
                     bandwidth: int | None = None):
    """Vectorized KPSS level test over the rows of an (N, T) matrix.

    Returns ``(statistics, rejects, degenerate, bandwidth)`` as arrays plus
    the lag actually used.  Rows with zero long-run variance get statistic 0
    and are flagged degenerate.
    """
    x = np.asarray(series_matrix, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected an (N, T) matrix, got shape {x.shape}")
    n, t_len = x.shape
    if t_len < _MIN_LENGTH:
        raise ValueError(f"series too short for the KPSS test: T={t_len} < {_MIN_LENGTH}")
    if not np.isfinite(x).all():
        raise ValueError("KPSS input contains non-finite values")
    crit = _critical_value(significance)
    lag = default_bandwidth(t_len) if bandwidth is None else int(bandwidth)
    if not 0 <= lag < t_len:
        raise ValueError(f"bandwidth must lie in [0, T), got {lag} for T={t_len}")

    e = x - x.mean(axis=1, keepdims=True)
    partial = np.cumsum(e, axis=1)
    eta = np.einsum("ij,ij->i", partial, partial) / float(t_len) ** 2
    s2 = np.einsum("ij,ij->i", e, e)
    for j in range(1, lag + 1):
        s2 = s2 + 2.0 * (1.0 - j / (lag + 1.0)) * np.einsum("ij,ij->i", e[:, j:], e[:, :-j])
    s2 = s2 / t_len

    degenerate = s2 <= 0.0
    stats = np.zeros(n)
    np.divide(eta, s2, out=stats, where=~degenerate)
    rejects = (stats > crit) & ~degenerate
    return stats, rejects, degenerate, lag


def kpss_level(x: np.ndarray, significance: float = 0.05,
               bandwidth: int | None = None) -> KpssResult:
    """KPSS test of the level-stationarity null for one series.

    Parameters
    ----------
    x : array_like, 1d
        Series of length >= 10 with finite entries.
    significance : float
        One of 0.10, 0.05, 0.025, 0.01; rejection compares the statistic
        against the matching asymptotic critical value.
    bandwidth : int, optional
        Newey-West truncation lag; defaults to the Schwert rule.

    Returns
    -------
    KpssResult
        ``reject_stationarity`` is true exactly when the statistic exceeds
        the critical value.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d series, got shape {x.shape}")
    stats, rejects, degenerate, lag = kpss_level_batch(
        x[None, :], significance=significance, bandwidth=bandwidth
    )
    return KpssResult(
        statistic=float(stats[0]),
        bandwidth=lag,
        critical_value=_critical_value(significance),
        reject_stationarity=bool(rejects[0]),
        degenerate=bool(degenerate[0]),
    )


def decide_differencing(series: MultiChannelSeries, significance: float = 0.05) -> DifferencingDecision:
    """Run the KPSS test on every channel and difference on a majority vote.

    ``d = 1`` when at least ``ceil(C/2)`` channels reject level stationarity,
    else ``d = 0``.  Constant channels count as stationary.
    """
    try:
        _, rejects, _, _ = kpss_level_batch(series.values.T, significance=significance)
    except ValueError as exc:
        raise ValueError(f"KPSS failed on the training split: {exc}") from exc
    n_reject = int(rejects.sum())
    d = 1 if n_reject >= math.ceil(series.c_len / 2) else 0
    return DifferencingDecision(d=d, per_channel_reject=tuple(bool(b) for b in rejects))


def difference(series: MultiChannelSeries, d: int) -> MultiChannelSeries:
    """Apply ``d`` rounds of first differencing (d in {0, 1})."""
    if d == 0:
        return series
    if d != 1:
        raise ValueError(f"only differencing orders 0 and 1 are supported, got {d}")
    if series.t_len < 2:
        raise ValueError("need at least 2 rows to take first differences")
    return MultiChannelSeries(np.diff(series.values, axis=0), series.channel_names)


def integrate(diff_forecast: np.ndarray, last_level: np.ndarray) -> np.ndarray:
    """Cumulatively sum predicted differences onto the last observed level.

    ``diff_forecast`` is (H, C) and ``last_level`` is the length-C vector of
    final observed values; the result is the (H, C) matrix of levels.
    """
    diff_forecast = np.asarray(diff_forecast, dtype=np.float64)
    last_level = np.asarray(last_level, dtype=np.float64)
    if diff_forecast.ndim != 2:
        raise ValueError(f"diff_forecast must be (H, C), got shape {diff_forecast.shape}")
    if last_level.shape != (diff_forecast.shape[1],):
        raise ValueError(
            f"last_level must have shape ({diff_forecast.shape[1]},), got {last_level.shape}"
        )
    return np.cumsum(diff_forecast, axis=0) + last_level
