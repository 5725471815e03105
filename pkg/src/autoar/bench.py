"""Rolling-window evaluation and aggregate scoring of forecasting methods.

Evaluation follows the standard long-horizon protocol: a stride-1 window
slides over the test split, the forecaster sees the rows before each window
(contexts may reach back into validation and training rows) and errors are
pooled over every window, horizon step and channel.  All metrics live in
standardized space.

Aggregation compares methods across (dataset, horizon) tasks by average
score, average within-task rank (ties averaged) and mean/median percentage
improvement over a designated baseline.  Scores use RMSE so that they grow
linearly with prediction error; an MAE mode substitutes MAE as the score.
Published per-task results for methods this package does not reimplement
ship under ``refdata/`` in the same CSV schema the harness emits.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from .armodel import ArModel, _forecast_batch
from .dataio import (
    MultiChannelSeries,
    Scaler,
    SplitSpec,
    apply_scaler,
    fit_scaler,
    split,
    subsample_train,
)

__all__ = [
    "ForecastTask",
    "EvalRecord",
    "MethodAggregate",
    "AggregateReport",
    "PreparedData",
    "prepare",
    "evaluate",
    "aggregate",
    "load_reference_results",
    "write_records",
    "write_aggregate_csv",
    "format_aggregate_table",
    "reference_results_path",
    "sample_counts",
]

_CHUNK_FLOATS = 4_000_000


@dataclass(frozen=True)
class ForecastTask:
    """One (dataset, horizon) evaluation setting."""

    dataset_id: str
    horizon: int
    context_len: int = 512
    split: SplitSpec | None = None
    train_fraction: float = 1.0
    stride: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.context_len < 1:
            raise ValueError(f"context_len must be positive, got {self.context_len}")
        if not (0.0 < self.train_fraction <= 1.0):
            raise ValueError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")


@dataclass(frozen=True)
class EvalRecord:
    """Metrics of one method on one task, in standardized space."""

    dataset: str
    horizon: int
    method: str
    mse: float | None = None
    mae: float | None = None
    rmse: float | None = None
    n_windows: int | None = None

    def __post_init__(self):
        if self.mse is None and self.mae is None and self.rmse is None:
            raise ValueError("a record needs at least one metric")
        if self.mse is not None and self.rmse is not None:
            if abs(self.rmse ** 2 - self.mse) > 1e-9 * max(1.0, abs(self.mse)):
                raise ValueError(
                    f"inconsistent rmse {self.rmse} for mse {self.mse} "
                    f"({self.dataset}, {self.horizon}, {self.method})"
                )

    def score(self, metric: str) -> float | None:
        if metric == "rmse":
            if self.rmse is not None:
                return self.rmse
            return math.sqrt(self.mse) if self.mse is not None else None
        if metric == "mae":
            return self.mae
        if metric == "mse":
            return self.mse
        raise ValueError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class MethodAggregate:
    average_score: float
    average_rank: float
    mean_pct_improvement: float
    median_pct_improvement: float
    n_tasks: int


@dataclass(frozen=True)
class AggregateReport:
    per_method: dict[str, MethodAggregate]
    baseline_method: str
    metric: str


@dataclass(frozen=True)
class PreparedData:
    """Standardized splits of one dataset, ready for fitting and evaluation.

    ``train`` is the (possibly subsampled) training split the model may see;
    ``history`` is the full train+validation prefix that provides forecast
    contexts; ``test`` is the evaluation split.  All three share the scaler
    fit on ``train``.
    """

    train: MultiChannelSeries
    history: MultiChannelSeries
    test: MultiChannelSeries
    scaler: Scaler
    row_counts: tuple[int, int, int]


def prepare(series: MultiChannelSeries, split_spec: SplitSpec,
            train_fraction: float = 1.0) -> PreparedData:
    """Split, optionally subsample the training rows, and standardize."""
    train_full, val, test = split(series, split_spec)
    counts = (train_full.t_len, val.t_len, test.t_len)
    train_used = subsample_train(train_full, train_fraction)
    scaler = fit_scaler(train_used)
    history = series.rows(0, train_full.t_len + val.t_len)
    return PreparedData(
        train=apply_scaler(scaler, train_used),
        history=apply_scaler(scaler, history),
        test=apply_scaler(scaler, test),
        scaler=scaler,
        row_counts=counts,
    )


def sample_counts(train_rows: int, val_rows: int, test_rows: int,
                  context_len: int, horizon: int) -> tuple[int, int, int]:
    """(context, target) sample counts per split under the windowed protocol.

    Training samples must fit entirely inside the training rows, while
    validation and test contexts reach back into the preceding rows, so only
    the target needs to fit.
    """
    return (
        train_rows - context_len - horizon + 1,
        val_rows - horizon + 1,
        test_rows - horizon + 1,
    )


def _anchors(test_len: int, horizon: int, stride: int) -> range:
    if test_len < horizon:
        raise ValueError(
            f"test split of {test_len} rows is shorter than the horizon {horizon}"
        )
    return range(0, test_len - horizon + 1, stride)


def _eval_model_chunks(model: ArModel, full: np.ndarray, offset: int,
                       anchors: range, horizon: int, jobs: int):
    """Per-chunk (sse, sae) partials for a fitted AR model.

    The chunk partition is fixed by the data shape alone, so partial sums
    (and hence the pooled metrics) do not depend on the worker count.
    """
    need = model.p + model.d
    if offset < need:
        raise ValueError(
            f"history of {offset} rows cannot provide p + d = {need} context rows"
        )
    n_channels = full.shape[1]
    ctx_view = sliding_window_view(full, need, axis=0)      # (T-need+1, C, need)
    tgt_view = sliding_window_view(full, horizon, axis=0)   # (T-H+1, C, H)
    anchor_arr = np.asarray(list(anchors))
    per_row = n_channels * (need + horizon + 1)
    step = max(1, _CHUNK_FLOATS // per_row)

    def one(i0: int):
        ks = anchor_arr[i0:i0 + step]
        ctx = ctx_view[offset + ks - need].reshape(-1, need)
        preds = _forecast_batch(model, ctx, horizon)
        preds = preds.reshape(ks.shape[0], n_channels, horizon)
        err = preds - tgt_view[offset + ks]
        return float(np.einsum("ijk,ijk->", err, err)), float(np.abs(err).sum())

    starts = range(0, anchor_arr.shape[0], step)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, starts))
    return [one(i0) for i0 in starts]


def _eval_callable_chunks(predict, full: np.ndarray, channel_names, offset: int,
                          anchors: range, context_len: int, horizon: int, jobs: int):
    """Per-anchor (sse, sae) partials for a generic predictor callable."""
    if offset < context_len:
        raise ValueError(
            f"history of {offset} rows cannot provide L = {context_len} context rows"
        )

    def one(k: int):
        ctx = MultiChannelSeries(full[offset + k - context_len: offset + k], channel_names)
        pred = np.asarray(predict(ctx, horizon), dtype=np.float64)
        target = full[offset + k: offset + k + horizon]
        if pred.shape != target.shape:
            raise ValueError(
                f"predictor returned shape {pred.shape}, expected {target.shape}"
            )
        err = pred - target
        return float(np.einsum("ij,ij->", err, err)), float(np.abs(err).sum())

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            yield from pool.map(one, anchors)
    else:
        for k in anchors:
            yield one(k)


def evaluate(predictor, task: ForecastTask, test: MultiChannelSeries,
             context_source: MultiChannelSeries, *, method: str,
             jobs: int = 1) -> EvalRecord:
    """Slide a window over the test split and pool forecast errors.

    Parameters
    ----------
    predictor : ArModel or callable
        A fitted model, or a callable ``f(context, horizon) -> (H, C)``
        receiving exactly ``task.context_len`` rows of history (the
        zero-shot pipeline is used this way).
    task : ForecastTask
        Supplies horizon, context length and stride.
    test : MultiChannelSeries
        Standardized test split; each anchor's targets lie inside it.
    context_source : MultiChannelSeries
        Standardized rows immediately preceding the test split; contexts
        may reach back into it.
    method : str
        Name recorded on the result.
    jobs : int
        Worker threads; the pooled metrics are identical for any value.

    Returns
    -------
    EvalRecord
        With ``mse``, ``mae``, ``rmse = sqrt(mse)`` and ``n_windows``.
    """
    if test.channel_names != context_source.channel_names:
        raise ValueError("test and context_source must share the same channels")
    anchors = _anchors(test.t_len, task.horizon, task.stride)
    offset = context_source.t_len
    full = np.concatenate([context_source.values, test.values], axis=0)
    if isinstance(predictor, ArModel):
        partials = _eval_model_chunks(predictor, full, offset, anchors,
                                      task.horizon, jobs)
    else:
        partials = list(_eval_callable_chunks(
            predictor, full, test.channel_names, offset, anchors,
            task.context_len, task.horizon, jobs,
        ))
    n_windows = len(anchors)
    n_values = n_windows * task.horizon * test.c_len
    sse = math.fsum(p[0] for p in partials)
    sae = math.fsum(p[1] for p in partials)
    mse = sse / n_values
    return EvalRecord(
        dataset=task.dataset_id,
        horizon=task.horizon,
        method=method,
        mse=mse,
        mae=sae / n_values,
        rmse=math.sqrt(mse),
        n_windows=n_windows,
    )


def aggregate(records, baseline: str, metric: str = "rmse") -> AggregateReport:
    """Aggregate per-task records into per-method summary rows.

    Within each (dataset, horizon) task, methods are ranked by score (lower
    is better, ties get averaged ranks) and improvement over the baseline is
    ``100 * (baseline - score) / baseline``.  Methods missing a task are
    excluded from that task's ranking; their own averages run over the tasks
    they cover.  The baseline must cover every task present.
    """
    if metric not in ("rmse", "mae", "mse"):
        raise ValueError(f"metric must be rmse, mae or mse, got {metric!r}")
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    scores: dict[tuple[str, int], dict[str, float]] = {}
    for rec in records:
        value = rec.score(metric)
        if value is None:
            continue
        task_scores = scores.setdefault((rec.dataset, rec.horizon), {})
        if rec.method in task_scores:
            raise ValueError(
                f"duplicate score for method {rec.method!r} on task "
                f"({rec.dataset}, {rec.horizon})"
            )
        task_scores[rec.method] = value
    if not scores:
        raise ValueError(f"no records carry the {metric} metric")
    tasks = sorted(scores)
    missing = [t for t in tasks if baseline not in scores[t]]
    if missing:
        raise ValueError(
            f"baseline {baseline!r} missing on tasks: {missing[:5]}"
            + ("..." if len(missing) > 5 else "")
        )
    per_method_scores: dict[str, list[float]] = {}
    per_method_ranks: dict[str, list[float]] = {}
    per_method_imps: dict[str, list[float]] = {}
    for task in tasks:
        task_scores = scores[task]
        methods = sorted(task_scores)
        ranks = rankdata([task_scores[m] for m in methods], method="average")
        base = task_scores[baseline]
        for m, rank in zip(methods, ranks):
            per_method_scores.setdefault(m, []).append(task_scores[m])
            per_method_ranks.setdefault(m, []).append(float(rank))
            per_method_imps.setdefault(m, []).append(100.0 * (base - task_scores[m]) / base)
    per_method = {}
    for m in sorted(per_method_scores):
        vals = per_method_scores[m]
        imps = per_method_imps[m]
        per_method[m] = MethodAggregate(
            average_score=float(np.mean(vals)),
            average_rank=float(np.mean(per_method_ranks[m])),
            mean_pct_improvement=float(np.mean(imps)),
            median_pct_improvement=float(np.median(imps)),
            n_tasks=len(vals),
        )
    return AggregateReport(per_method=per_method, baseline_method=baseline, metric=metric)


_RECORD_HEADER = ["dataset", "horizon", "method", "metric", "value"]
_KNOWN_METRICS = ("mse", "mae", "rmse", "n_windows")


def load_reference_results(path: str | os.PathLike) -> list[EvalRecord]:
    """Read per-task results from the flat CSV schema.

    The header must be ``dataset,horizon,method,metric,value`` with metric
    one of ``mse``, ``mae``, ``rmse`` or ``n_windows``.  Rows for the same
    (dataset, horizon, method) merge into one record; repeating a metric for
    the same key is an error.  ``rmse`` is derived from ``mse`` (and vice
    versa) when only one is given.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if [h.strip() for h in header] != _RECORD_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(_RECORD_HEADER)}, got {','.join(header)}"
            )
        merged: dict[tuple[str, int, str], dict[str, float]] = {}
        order: list[tuple[str, int, str]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            dataset, horizon_s, method, metric, value_s = (f.strip() for f in row)
            if metric not in _KNOWN_METRICS:
                raise ValueError(
                    f"{path}:{lineno}: unknown metric {metric!r} "
                    f"(expected one of {', '.join(_KNOWN_METRICS)})"
                )
            try:
                horizon = int(horizon_s)
                value = float(value_s)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {row}") from None
            key = (dataset, horizon, method)
            if key not in merged:
                merged[key] = {}
                order.append(key)
            if metric in merged[key]:
                raise ValueError(
                    f"{path}:{lineno}: duplicate ({dataset}, {horizon}, {method}) row "
                    f"for metric {metric!r}"
                )
            merged[key][metric] = value
    records = []
    for key in order:
        dataset, horizon, method = key
        metrics = merged[key]
        mse = metrics.get("mse")
        rmse = metrics.get("rmse")
        if mse is not None and rmse is None:
            rmse = math.sqrt(mse)
        elif rmse is not None and mse is None:
            mse = rmse ** 2
        n_windows = metrics.get("n_windows")
        records.append(EvalRecord(
            dataset=dataset,
            horizon=horizon,
            method=method,
            mse=mse,
            mae=metrics.get("mae"),
            rmse=rmse,
            n_windows=None if n_windows is None else int(n_windows),
        ))
    return records


def write_records(records, path: str | os.PathLike) -> None:
    """Write records in the flat CSV schema, one metric per row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RECORD_HEADER)
        for rec in records:
            for metric in _KNOWN_METRICS:
                value = getattr(rec, metric)
                if value is not None:
                    text = str(value) if metric == "n_windows" else repr(float(value))
                    writer.writerow([rec.dataset, rec.horizon, rec.method, metric, text])


def _report_rows(report: AggregateReport):
    rows = sorted(report.per_method.items(), key=lambda kv: (kv[1].average_score, kv[0]))
    for method, agg in rows:
        yield (method, agg.n_tasks, agg.average_score, agg.average_rank,
               agg.mean_pct_improvement, agg.median_pct_improvement)


def write_aggregate_csv(report: AggregateReport, path: str | os.PathLike) -> None:
    """Write the aggregate table, best average score first."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "method", "n_tasks", f"average_{report.metric}", "average_rank",
            "mean_pct_improvement", "median_pct_improvement",
        ])
        for method, n, score, rank, mean_imp, med_imp in _report_rows(report):
            writer.writerow([method, n, f"{score:.6f}", f"{rank:.4f}",
                             f"{mean_imp:.4f}", f"{med_imp:.4f}"])


def format_aggregate_table(report: AggregateReport) -> str:
    """Aligned text table of the aggregate report."""
    header = (f"{'method':<24} {'tasks':>5} {'avg_' + report.metric:>10} "
              f"{'rank':>6} {'mean%imp':>9} {'med%imp':>8}")
    lines = [header, "-" * len(header)]
    for method, n, score, rank, mean_imp, med_imp in _report_rows(report):
        lines.append(f"{method:<24} {n:>5} {score:>10.4f} {rank:>6.2f} "
                     f"{mean_imp:>9.2f} {med_imp:>8.2f}")
    lines.append(f"baseline: {report.baseline_method}")
    return "\n".join(lines)


def reference_results_path(metric: str = "mse") -> Path:
    """Path of the bundled published per-task results (``mse`` or ``mae``)."""
    if metric not in ("mse", "mae"):
        raise ValueError(f"bundled reference results exist for mse and mae, not {metric!r}")
    return Path(resources.files("autoar") / "refdata" / f"reference_{metric}.csv")
