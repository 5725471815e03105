"""Pooled linear autoregression: least-squares fitting and recursive forecasts.

One coefficient vector is shared across all channels: every channel
contributes its (lag window, next value) pairs to a single pooled regression,
so maximizing the i.i.d. Gaussian likelihood over channels is the same as
minimizing pooled squared error.  A lookback of ``p`` plus the intercept
gives ``p + 1`` parameters regardless of the channel count.

Multi-step forecasts are recursive: each predicted value is fed back as an
input for the next step.  With differencing order ``d = 1`` the recursion
runs on first differences and the result is integrated back onto the last
observed level.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg as sla

from .dataio import MultiChannelSeries
from .stattests import integrate

__all__ = [
    "ArModel",
    "FitDiagnostics",
    "fit",
    "fit_per_channel",
    "forecast",
    "save_model",
    "load_model",
]

# Rows per Gram-accumulation chunk are sized so a chunk holds ~4M floats.
_CHUNK_FLOATS = 4_000_000

# Relative ridge added to the normal-equation diagonal when the plain
# Cholesky solve fails (rank-deficient designs such as constant series).
_RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class ArModel:
    """A fitted autoregression of order ``p`` with differencing order ``d``.

    ``coeffs[k-1]`` multiplies the value ``k`` steps back, so ``coeffs[0]``
    weights the most recent observation.  ``noise_var`` is the maximum
    likelihood residual variance ``rss / n`` over the pooled training
    samples.
    """

    intercept: float
    coeffs: np.ndarray
    d: int = 0
    noise_var: float = 0.0
    n_train_samples: int = 0
    channel_names: tuple[str, ...] | None = None

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        if coeffs.size < 1:
            raise ValueError("an AR model needs at least one lag coefficient")
        if not np.isfinite(coeffs).all() or not math.isfinite(self.intercept):
            raise ValueError("AR coefficients must be finite")
        if self.d not in (0, 1):
            raise ValueError(f"differencing order must be 0 or 1, got {self.d}")
        if self.noise_var < 0:
            raise ValueError(f"noise variance must be nonnegative, got {self.noise_var}")
        if coeffs.flags.writeable:
            coeffs = coeffs.copy()
            coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def p(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_params(self) -> int:
        """Lag coefficients plus the intercept."""
        return self.p + 1


@dataclass(frozen=True)
class FitDiagnostics:
    """Least-squares fit summary on the pooled training samples.

    ``bic = n * ln(rss / n) + k * ln(n)`` with ``k`` counting lag
    coefficients, the intercept and the noise variance.
    """

    rss: float
    n: int
    log_likelihood: float
    bic: float


def _accumulate(x: np.ndarray, p: int, gram: np.ndarray, xty: np.ndarray,
                col_sum: np.ndarray, weights: np.ndarray | None = None):
    """Add one channel's lag-window samples to the pooled normal equations.

    Design columns are ordered most-recent-first.  Returns the per-channel
    tallies ``(n_eff, sum_y, sum_yy)``.
    """
    t_len = x.shape[0]
    windows = sliding_window_view(x, p)          # row i = x[i : i+p], oldest first
    targets = x[p:]
    n_rows = targets.shape[0]
    step = max(1, _CHUNK_FLOATS // max(p, 1))
    n_eff = 0.0
    sum_y = 0.0
    sum_yy = 0.0
    for i0 in range(0, n_rows, step):
        i1 = min(i0 + step, n_rows)
        block = np.ascontiguousarray(windows[i0:i1, ::-1])
        y = targets[i0:i1]
        if weights is None:
            gram += block.T @ block
            xty += block.T @ y
            col_sum += block.sum(axis=0)
            n_eff += i1 - i0
            sum_y += float(y.sum())
            sum_yy += float(y @ y)
        else:
            w = weights[i0:i1]
            wblock = block * w[:, None]
            gram += wblock.T @ block
            xty += block.T @ (w * y)
            col_sum += wblock.sum(axis=0)
            n_eff += float(w.sum())
            sum_y += float(w @ y)
            sum_yy += float(w @ (y * y))
    return n_eff, sum_y, sum_yy


def _residual_sum(x: np.ndarray, p: int, coeffs: np.ndarray, intercept: float,
                  weights: np.ndarray | None = None) -> float:
    """Sum of squared one-step residuals for one channel."""
    windows = sliding_window_view(x, p)
    targets = x[p:]
    coeffs_asc = coeffs[::-1].copy()             # match the oldest-first window layout
    n_rows = targets.shape[0]
    step = max(1, _CHUNK_FLOATS // max(p, 1))
    total = 0.0
    for i0 in range(0, n_rows, step):
        i1 = min(i0 + step, n_rows)
        resid = targets[i0:i1] - windows[i0:i1] @ coeffs_asc - intercept
        if weights is None:
            total += float(resid @ resid)
        else:
            total += float(weights[i0:i1] @ (resid * resid))
    return total


def _try_cholesky(a: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Solve ``a x = b`` by Cholesky, rejecting numerically unusable results."""
    try:
        factor = sla.cho_factor(a, lower=True, check_finite=False)
        theta = sla.cho_solve(factor, b, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    if not np.isfinite(theta).all():
        return None
    residual = np.linalg.norm(a @ theta - b)
    scale = np.linalg.norm(a, 1) * np.linalg.norm(theta) + np.linalg.norm(b)
    if residual > 1e-8 * max(scale, 1.0):
        return None
    return theta


def _solve_normal_equations(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain Cholesky first, then a ridge retry, then pivoted least squares."""
    theta = _try_cholesky(a, b)
    if theta is not None:
        return theta
    lam = _RIDGE_SCALE * float(np.mean(np.diag(a)))
    if lam > 0.0:
        ridged = a + lam * np.eye(a.shape[0])
        theta = _try_cholesky(ridged, b)
        if theta is not None:
            return theta
        theta, *_ = sla.lstsq(ridged, b, lapack_driver="gelsy", check_finite=False)
    else:
        theta, *_ = sla.lstsq(a, b, lapack_driver="gelsy", check_finite=False)
    if not np.isfinite(theta).all():
        raise np.linalg.LinAlgError("normal equations could not be solved stably")
    return theta


def _pooled_lstsq(columns: list[np.ndarray], p: int, include_intercept: bool,
                  weights: list[np.ndarray] | None = None):
    """Pooled one-step regression over per-channel (possibly weighted) samples.

    Returns ``(intercept, coeffs, rss, n_eff)``.
    """
    gram = np.zeros((p, p))
    xty = np.zeros(p)
    col_sum = np.zeros(p)
    n_eff = 0.0
    sum_y = 0.0
    for i, x in enumerate(columns):
        w = None if weights is None else weights[i]
        dn, dy, _ = _accumulate(x, p, gram, xty, col_sum, w)
        n_eff += dn
        sum_y += dy
    if include_intercept:
        a = np.empty((p + 1, p + 1))
        a[:p, :p] = gram
        a[:p, p] = col_sum
        a[p, :p] = col_sum
        a[p, p] = n_eff
        rhs = np.append(xty, sum_y)
        theta = _solve_normal_equations(a, rhs)
        coeffs, intercept = theta[:p], float(theta[p])
    else:
        theta = _solve_normal_equations(gram, xty)
        coeffs, intercept = theta, 0.0
    rss = 0.0
    for i, x in enumerate(columns):
        w = None if weights is None else weights[i]
        rss += _residual_sum(x, p, coeffs, intercept, w)
    return intercept, coeffs, max(rss, 0.0), n_eff


def _diagnostics(rss: float, n: float, p: int, include_intercept: bool) -> FitDiagnostics:
    n_int = int(round(n))
    k = p + (1 if include_intercept else 0) + 1   # +1 for the noise variance
    if rss > 0.0:
        sigma2 = rss / n
        log_likelihood = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0)
        bic = n * math.log(sigma2) + k * math.log(n)
    else:
        log_likelihood = math.inf
        bic = -math.inf
    return FitDiagnostics(rss=rss, n=n_int, log_likelihood=log_likelihood, bic=bic)


def fit(train: MultiChannelSeries, p: int, d: int = 0, *,
        include_intercept: bool = True) -> tuple[ArModel, FitDiagnostics]:
    """Fit a pooled AR(p) on a training series by least squares.

    Parameters
    ----------
    train : MultiChannelSeries
        Training split (already standardized by the caller's convention).
    p : int
        Lookback; after differencing, every channel must keep more than
        ``p`` rows so at least one sample exists.
    d : int
        Differencing order, 0 or 1.  Differencing is applied per channel
        before building the regression.
    include_intercept : bool
        Fit the constant term (on by default).

    Returns
    -------
    (ArModel, FitDiagnostics)
    """
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise ValueError(f"lookback must be a positive integer, got {p!r}")
    if d not in (0, 1):
        raise ValueError(f"differencing order must be 0 or 1, got {d}")
    values = np.diff(train.values, axis=0) if d == 1 else train.values
    t_eff = values.shape[0]
    if t_eff <= p:
        raise ValueError(
            f"insufficient samples: need more than p={p} rows per channel "
            f"after differencing, have {t_eff}"
        )
    columns = [np.ascontiguousarray(values[:, c]) for c in range(values.shape[1])]
    intercept, coeffs, rss, n = _pooled_lstsq(columns, int(p), include_intercept)
    diag = _diagnostics(rss, n, int(p), include_intercept)
    model = ArModel(
        intercept=intercept,
        coeffs=coeffs,
        d=d,
        noise_var=rss / n,
        n_train_samples=int(n),
        channel_names=train.channel_names,
    )
    return model, diag


def fit_per_channel(train: MultiChannelSeries, p: int, d: int = 0, *,
                    include_intercept: bool = True) -> list[tuple[ArModel, FitDiagnostics]]:
    """Fit one independent AR(p) per channel instead of pooling.

    Kept as a non-default option for experiments; the benchmark workflow
    uses the pooled fit.
    """
    out = []
    for c in range(train.c_len):
        single = MultiChannelSeries(train.values[:, c:c + 1], (train.channel_names[c],))
        out.append(fit(single, p, d, include_intercept=include_intercept))
    return out


def _forecast_batch(model: ArModel, contexts: np.ndarray, horizon: int) -> np.ndarray:
    """Recursive forecasts for a batch of raw level contexts.

    ``contexts`` is (N, p + d) with time ascending along axis 1; the result
    is the (N, horizon) matrix of level forecasts.
    """
    p, d = model.p, model.d
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.ndim != 2 or contexts.shape[1] != p + d:
        raise ValueError(f"contexts must be (N, p+d) = (N, {p + d}), got {contexts.shape}")
    n = contexts.shape[0]
    if horizon == 0:
        return np.zeros((n, 0))
    start = np.diff(contexts, axis=1) if d == 1 else contexts
    buf = np.empty((n, p + horizon))
    buf[:, :p] = start
    coeffs_asc = np.ascontiguousarray(model.coeffs[::-1])
    for h in range(horizon):
        buf[:, p + h] = buf[:, h:h + p] @ coeffs_asc + model.intercept
    preds = buf[:, p:]
    if d == 1:
        preds = np.cumsum(preds, axis=1) + contexts[:, -1:]
    return preds


def forecast(model: ArModel, context, horizon: int) -> np.ndarray:
    """Forecast ``horizon`` steps ahead for every channel of ``context``.

    The recursion consumes the last ``p + d`` rows of the context; earlier
    rows are ignored.  Returns an (horizon, C) matrix of level forecasts.
    """
    values = context.values if isinstance(context, MultiChannelSeries) else np.asarray(context, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"context must be a (T, C) series, got shape {values.shape}")
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    need = model.p + model.d
    if values.shape[0] < need:
        raise ValueError(
            f"context too short: need at least p + d = {need} rows, have {values.shape[0]}"
        )
    tail = values[-need:]
    preds = _forecast_batch(model, np.ascontiguousarray(tail.T), horizon)
    return np.ascontiguousarray(preds.T)


_MODEL_FORMAT = "autoar-model"


def save_model(model: ArModel, path: str | os.PathLike) -> None:
    """Write a model as a flat JSON record.

    Keys: ``p``, ``d``, ``intercept``, ``coeffs`` (most recent lag first),
    ``noise_var``, ``n_train_samples`` and optional ``channel_names``.
    JSON floats round-trip exactly, so a reloaded model forecasts
    bit-identically.
    """
    record = {
        "format": _MODEL_FORMAT,
        "p": model.p,
        "d": model.d,
        "intercept": model.intercept,
        "coeffs": model.coeffs.tolist(),
        "noise_var": model.noise_var,
        "n_train_samples": model.n_train_samples,
        "channel_names": list(model.channel_names) if model.channel_names else None,
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> ArModel:
    """Load a model written by :func:`save_model`."""
    with open(path) as fh:
        record = json.load(fh)
    if record.get("format") != _MODEL_FORMAT:
        raise ValueError(f"{path}: not a serialized AR model")
    coeffs = np.asarray(record["coeffs"], dtype=np.float64)
    if coeffs.shape[0] != record["p"]:
        raise ValueError(f"{path}: coefficient count {coeffs.shape[0]} != p {record['p']}")
    names = record.get("channel_names")
    return ArModel(
        intercept=float(record["intercept"]),
        coeffs=coeffs,
        d=int(record["d"]),
        noise_var=float(record["noise_var"]),
        n_train_samples=int(record["n_train_samples"]),
        channel_names=tuple(names) if names else None,
    )
