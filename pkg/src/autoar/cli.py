"""Command-line entry point for fitting, forecasting and benchmarking.

Subcommands
-----------
fit        tune and fit a model on one dataset's training split
forecast   roll a saved model forward from a context CSV
bench      evaluate the tuned and untuned models across datasets/horizons
zeroshot   evaluate the zero-shot variant over the test windows
aggregate  combine per-task record files into the aggregate table

Every run echoes its resolved configuration to ``<out>/config.echo``.  A
JSON config file (``--config``) may supply any long option; explicit flags
win over the file.  Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import dataio
from .armodel import ArModel, forecast, load_model, save_model
from .bench import ForecastTask, aggregate, evaluate, load_reference_results
from .dataio import DATASET_PRESETS, SplitSpec, load_csv
from .pipeline import (
    DEFAULT_LOOKBACK_GRID,
    DEFAULT_ZERO_SHOT_GRID,
    AutoArConfig,
    run_auto_ar,
    run_untuned_ar,
    run_zero_shot,
    zero_shot_model,
)

log = logging.getLogger("autoar")


class ConfigError(Exception):
    """Invalid flags, config file or option combination."""


class DataError(Exception):
    """Missing or malformed dataset, model or reference file."""


_EXIT_CONFIG = 2
_EXIT_DATA = 3
_EXIT_NUMERICAL = 4

# --baseline-ref / --records shorthand for the packaged reference results.
_BUNDLED = {"bundled-mse": "mse", "bundled-mae": "mae"}


@dataclass
class RunConfig:
    """Resolved settings for one CLI invocation, echoed for provenance."""

    command: str
    datasets: list[dict] = field(default_factory=list)
    horizons: list[int] | None = None
    context_len: int = 512
    train_fraction: float = 1.0
    stride: int = 1
    jobs: int = 1
    grid: list[int] = field(default_factory=lambda: list(DEFAULT_LOOKBACK_GRID))
    lookback_max: int = 512
    kpss_alpha: float = 0.05
    force_d: int | None = None
    intercept: bool = True
    untuned_p: int = 512
    zero_shot_window: int = 256
    zero_shot_grid: list[int] = field(default_factory=lambda: list(DEFAULT_ZERO_SHOT_GRID))
    amortized: bool = False
    baseline: str = "Auto-ARIMA"
    baseline_ref: str | None = None
    metric: str = "rmse"
    records: list[str] = field(default_factory=list)
    out: str | None = None

    def echo(self, out_dir: Path) -> None:
        payload = json.dumps(asdict(self), indent=2, sort_keys=True)
        (out_dir / "config.echo").write_text(payload + "\n")


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated integer list, got {text!r}") from None


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _option(args, file_cfg: dict, name: str, default):
    """Explicit flag > config-file entry > hard default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in file_cfg:
        return file_cfg[name]
    return default


def _resolve_datasets(args, file_cfg) -> list[dict]:
    """Fail-fast resolution of every dataset reference to an existing file."""
    presets = _option(args, file_cfg, "preset", None)
    paths = _option(args, file_cfg, "data", None)
    data_dir = _option(args, file_cfg, "data_dir", None)
    split_text = _option(args, file_cfg, "split", None)
    out = []
    if presets:
        names = presets if isinstance(presets, list) else [p for p in presets.split(",") if p]
        for name in names:
            key = name.strip().lower()
            if key not in DATASET_PRESETS:
                raise ConfigError(
                    f"unknown preset {name!r}; available: {', '.join(sorted(DATASET_PRESETS))}"
                )
            preset = DATASET_PRESETS[key]
            path = dataio.resolve_dataset_path(preset, data_dir)
            if path is None:
                raise DataError(
                    f"dataset file {preset.filename!r} for preset {name!r} not found; "
                    f"searched --data-dir, $AUTOAR_DATA and ./data"
                )
            out.append({"id": preset.name, "path": str(path), "preset": key})
    if paths:
        entries = paths if isinstance(paths, list) else [p for p in paths.split(",") if p]
        for entry in entries:
            path = Path(entry)
            if not path.is_file():
                raise DataError(f"dataset file not found: {path}")
            out.append({"id": path.stem, "path": str(path), "preset": None,
                        "split": split_text})
    if not out:
        raise ConfigError("no dataset given; use --preset or --data")
    return out


def _dataset_split(ds: dict) -> SplitSpec:
    if ds.get("preset"):
        return DATASET_PRESETS[ds["preset"]].split
    split_text = ds.get("split")
    if split_text:
        parts = _parse_int_list(split_text, "--split")
        if len(parts) != 3:
            raise ConfigError(f"--split needs train,val,test row counts, got {split_text!r}")
        return SplitSpec.explicit(*parts)
    return SplitSpec.fractional()


def _dataset_horizons(ds: dict, cfg: RunConfig) -> list[int]:
    if cfg.horizons:
        return cfg.horizons
    if ds.get("preset"):
        return list(DATASET_PRESETS[ds["preset"]].horizons)
    return [96, 192, 336, 720]


def _load_series(ds: dict) -> dataio.MultiChannelSeries:
    expected = DATASET_PRESETS[ds["preset"]].channels if ds.get("preset") else None
    try:
        return load_csv(ds["path"], expected_channels=expected)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def _auto_ar_config(cfg: RunConfig, zero_shot: bool = False) -> AutoArConfig:
    try:
        return AutoArConfig(
            max_lookback=cfg.lookback_max,
            lookback_grid=tuple(cfg.grid),
            kpss_significance=cfg.kpss_alpha,
            include_intercept=cfg.intercept,
            force_d=cfg.force_d,
            zero_shot=zero_shot,
            zero_shot_window=cfg.zero_shot_window,
            zero_shot_grid=tuple(cfg.zero_shot_grid),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _reference_path(token: str) -> Path:
    if token in _BUNDLED:
        return bench_mod.reference_results_path(_BUNDLED[token])
    path = Path(token)
    if not path.is_file():
        raise DataError(f"reference results file not found: {path}")
    return path


def _merge_reference(records, ref_records):
    """Reference rows lose to locally computed rows for the same task+method."""
    local_keys = {(r.dataset, r.horizon, r.method) for r in records}
    kept, dropped = [], 0
    for rec in ref_records:
        if (rec.dataset, rec.horizon, rec.method) in local_keys:
            dropped += 1
        else:
            kept.append(rec)
    if dropped:
        log.info("reference rows shadowed by local results: %d", dropped)
    return list(records) + kept


def _ensure_out(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigError("--out directory is required")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _write_selection(path: Path, dataset_id: str, selection, alpha: float) -> None:
    payload = {
        "dataset": dataset_id,
        "chosen_p": selection.chosen_p,
        "d": selection.d,
        "bic_by_p": {str(p): selection.bic_by_p[p] for p in selection.bic_by_p},
        "per_channel_reject": list(selection.per_channel_reject),
        "skipped_lookbacks": list(selection.skipped),
        "kpss_significance": alpha,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_fit(cfg: RunConfig) -> int:
    out_dir = _ensure_out(cfg)
    if len(cfg.datasets) != 1:
        raise ConfigError("fit expects exactly one dataset")
    ds = cfg.datasets[0]
    auto_cfg = _auto_ar_config(cfg)
    cfg.echo(out_dir)
    series = _load_series(ds)
    prepared = bench_mod.prepare(series, _dataset_split(ds), cfg.train_fraction)
    t0 = time.perf_counter()
    model, selection = run_auto_ar(prepared.train, auto_cfg)
    elapsed = time.perf_counter() - t0
    models_dir = out_dir / "models"
    models_dir.mkdir(exist_ok=True)
    save_model(model, models_dir / f"{ds['id']}.model")
    _write_selection(out_dir / "selection.json", ds["id"], selection, cfg.kpss_alpha)
    log.info("[%s] d=%d p=%d fit=%.1fs -> %s", ds["id"], selection.d,
             selection.chosen_p, elapsed, models_dir / f"{ds['id']}.model")
    return 0


def cmd_forecast(args) -> int:
    try:
        model = load_model(args.model)
    except FileNotFoundError:
        raise DataError(f"model file not found: {args.model}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {args.model}: {exc}") from exc
    try:
        context = load_csv(args.context)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if model.channel_names and len(model.channel_names) != context.c_len:
        raise DataError(
            f"model was fit on {len(model.channel_names)} channels but the "
            f"context has {context.c_len}"
        )
    horizon = args.horizon
    if horizon < 0:
        raise ConfigError(f"horizon must be nonnegative, got {horizon}")
    if horizon > 0 and context.t_len < model.p + model.d:
        raise DataError(
            f"context has {context.t_len} rows; model needs p + d = {model.p + model.d}"
        )
    preds = forecast(model, context, horizon) if horizon > 0 else np.zeros((0, context.c_len))
    out = Path(args.out)
    with open(out, "w") as fh:
        fh.write("t," + ",".join(context.channel_names) + "\n")
        for h in range(horizon):
            fh.write(str(h + 1) + "," + ",".join(repr(float(v)) for v in preds[h]) + "\n")
    log.info("wrote %d forecast rows to %s", horizon, out)
    return 0


def _bench_common(cfg: RunConfig, zero_shot: bool) -> int:
    out_dir = _ensure_out(cfg)
    auto_cfg = _auto_ar_config(cfg, zero_shot=zero_shot)
    ref_path = _reference_path(cfg.baseline_ref) if cfg.baseline_ref else None
    cfg.echo(out_dir)
    models_dir = out_dir / "models"
    models_dir.mkdir(exist_ok=True)
    records = []
    for ds in cfg.datasets:
        series = _load_series(ds)
        prepared = bench_mod.prepare(series, _dataset_split(ds), cfg.train_fraction)
        horizons = _dataset_horizons(ds, cfg)
        if zero_shot:
            records += _run_zero_shot_tasks(cfg, auto_cfg, ds, prepared, horizons, models_dir)
        else:
            records += _run_supervised_tasks(cfg, auto_cfg, ds, prepared, horizons, models_dir)
    bench_mod.write_records(records, out_dir / "records.csv")
    if ref_path is not None:
        merged = _merge_reference(records, load_reference_results(ref_path))
        report = aggregate(merged, baseline=cfg.baseline, metric=cfg.metric)
        bench_mod.write_aggregate_csv(report, out_dir / "aggregate.csv")
        print(bench_mod.format_aggregate_table(report))
    return 0


def _run_supervised_tasks(cfg, auto_cfg, ds, prepared, horizons, models_dir):
    t0 = time.perf_counter()
    tuned, selection = run_auto_ar(prepared.train, auto_cfg)
    tuned_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    untuned = run_untuned_ar(prepared.train, cfg.untuned_p, include_intercept=cfg.intercept)
    untuned_time = time.perf_counter() - t0
    records = []
    for horizon in horizons:
        task = ForecastTask(
            dataset_id=ds["id"], horizon=horizon, context_len=cfg.context_len,
            train_fraction=cfg.train_fraction, stride=cfg.stride,
        )
        rec = evaluate(tuned, task, prepared.test, prepared.history,
                       method="Auto-AR", jobs=cfg.jobs)
        records.append(rec)
        log.info("[%s H=%d] Auto-AR d=%d p=%d fit=%.1fs mse=%.4f mae=%.4f windows=%d",
                 ds["id"], horizon, selection.d, selection.chosen_p, tuned_time,
                 rec.mse, rec.mae, rec.n_windows)
        rec0 = evaluate(untuned, task, prepared.test, prepared.history,
                        method="AR (d=0)", jobs=cfg.jobs)
        records.append(rec0)
        log.info("[%s H=%d] AR (d=0) p=%d fit=%.1fs mse=%.4f mae=%.4f windows=%d",
                 ds["id"], horizon, untuned.p, untuned_time,
                 rec0.mse, rec0.mae, rec0.n_windows)
        save_model(tuned, models_dir / f"{ds['id']}_{horizon}.model")
        _write_selection(models_dir / f"{ds['id']}_{horizon}.selection.json",
                         ds["id"], selection, cfg.kpss_alpha)
    return records


def _run_zero_shot_tasks(cfg, auto_cfg, ds, prepared, horizons, models_dir):
    records = []
    for horizon in horizons:
        task = ForecastTask(
            dataset_id=ds["id"], horizon=horizon, context_len=cfg.context_len,
            train_fraction=cfg.train_fraction, stride=cfg.stride,
        )
        t0 = time.perf_counter()
        if cfg.amortized:
            history = prepared.history
            first_ctx = history.rows(history.t_len - cfg.context_len, history.t_len)
            model, selection = zero_shot_model(first_ctx, auto_cfg)
            save_model(model, models_dir / f"{ds['id']}_{horizon}.model")
            predictor = model
        else:
            def predictor(context, h, _cfg=auto_cfg):
                return run_zero_shot(context, _cfg, h)
        rec = evaluate(predictor, task, prepared.test, prepared.history,
                       method="Auto-AR (Zero Shot)", jobs=cfg.jobs)
        records.append(rec)
        log.info("[%s H=%d] Auto-AR (Zero Shot) W=%d eval=%.1fs mse=%.4f mae=%.4f windows=%d",
                 ds["id"], horizon, cfg.zero_shot_window, time.perf_counter() - t0,
                 rec.mse, rec.mae, rec.n_windows)
    return records


def cmd_aggregate(cfg: RunConfig) -> int:
    out_dir = _ensure_out(cfg)
    cfg.echo(out_dir)
    if not cfg.records and not cfg.baseline_ref:
        raise ConfigError("aggregate needs --records and/or --baseline-ref")
    records = []
    for token in cfg.records:
        records.extend(load_reference_results(_reference_path(token)))
    if cfg.baseline_ref:
        records = _merge_reference(records, load_reference_results(_reference_path(cfg.baseline_ref)))
    try:
        report = aggregate(records, baseline=cfg.baseline, metric=cfg.metric)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    bench_mod.write_aggregate_csv(report, out_dir / "aggregate.csv")
    print(bench_mod.format_aggregate_table(report))
    return 0


def _add_dataset_flags(sub):
    sub.add_argument("--preset", help="comma-separated preset names (e.g. etth1,weather)")
    sub.add_argument("--data", help="comma-separated CSV paths")
    sub.add_argument("--data-dir", dest="data_dir", help="directory holding preset CSV files")
    sub.add_argument("--split", help="explicit train,val,test row counts for --data files")
    sub.add_argument("--train-fraction", dest="train_fraction", type=float,
                     help="trailing fraction of the training split to use (default 1.0)")


def _add_tuning_flags(sub):
    sub.add_argument("--grid", help="comma-separated lookback candidates")
    sub.add_argument("--lookback-max", dest="lookback_max", type=int,
                     help="largest admissible lookback (default 512)")
    sub.add_argument("--kpss-alpha", dest="kpss_alpha", type=float,
                     help="KPSS significance level (default 0.05)")
    sub.add_argument("--force-d", dest="force_d", type=int, choices=(0, 1),
                     help="skip the stationarity vote and fix the differencing order")
    sub.add_argument("--no-intercept", dest="intercept", action="store_false", default=None,
                     help="drop the constant term")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autoar",
        description="Tuned linear autoregression for long-horizon forecasting.",
    )
    parser.add_argument("--config", help="JSON file supplying any long option")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="tune and fit on one dataset")
    _add_dataset_flags(p_fit)
    _add_tuning_flags(p_fit)
    p_fit.add_argument("--out", help="output directory")

    p_fc = sub.add_parser("forecast", help="forecast from a saved model")
    p_fc.add_argument("--model", required=True, help="model file from fit/bench")
    p_fc.add_argument("--context", required=True, help="context CSV (same schema as datasets)")
    p_fc.add_argument("--horizon", required=True, type=int)
    p_fc.add_argument("--out", required=True, help="output CSV path")

    p_bench = sub.add_parser("bench", help="evaluate across datasets and horizons")
    _add_dataset_flags(p_bench)
    _add_tuning_flags(p_bench)
    for p in (p_bench,):
        p.add_argument("--horizons", help="comma-separated horizons (default: preset grid)")
        p.add_argument("--context-len", dest="context_len", type=int)
        p.add_argument("--stride", type=int, help="window stride over the test split")
        p.add_argument("--jobs", type=int, help="worker threads")
        p.add_argument("--untuned-p", dest="untuned_p", type=int,
                       help="lookback of the AR (d=0) baseline (default 512)")
        p.add_argument("--baseline-ref", dest="baseline_ref",
                       help="reference results CSV, or bundled-mse / bundled-mae")
        p.add_argument("--baseline", help="baseline method name (default Auto-ARIMA)")
        p.add_argument("--metric", choices=("rmse", "mae", "mse"),
                       help="aggregation score (default rmse)")
        p.add_argument("--out", help="output directory")

    p_zs = sub.add_parser("zeroshot", help="evaluate the zero-shot variant")
    _add_dataset_flags(p_zs)
    _add_tuning_flags(p_zs)
    p_zs.add_argument("--horizons", help="comma-separated horizons (default: preset grid)")
    p_zs.add_argument("--context-len", dest="context_len", type=int)
    p_zs.add_argument("--stride", type=int)
    p_zs.add_argument("--jobs", type=int)
    p_zs.add_argument("--zero-shot-window", dest="zero_shot_window", type=int,
                      help="rolling subwindow size W (default 256)")
    p_zs.add_argument("--zs-grid", dest="zs_grid",
                      help="comma-separated zero-shot lookback candidates")
    p_zs.add_argument("--amortized", action="store_true", default=None,
                      help="fit once per task on the first context instead of per window")
    p_zs.add_argument("--baseline-ref", dest="baseline_ref")
    p_zs.add_argument("--baseline")
    p_zs.add_argument("--metric", choices=("rmse", "mae", "mse"))
    p_zs.add_argument("--out", help="output directory")

    p_agg = sub.add_parser("aggregate", help="aggregate record files")
    p_agg.add_argument("--records", help="comma-separated record CSVs (or bundled-mse/mae)")
    p_agg.add_argument("--baseline-ref", dest="baseline_ref",
                       help="extra reference records merged in (losing on collisions)")
    p_agg.add_argument("--baseline")
    p_agg.add_argument("--metric", choices=("rmse", "mae", "mse"))
    p_agg.add_argument("--out", help="output directory")

    return parser


def _resolve_run_config(args) -> RunConfig:
    file_cfg = _load_config_file(args.config)
    cfg = RunConfig(command=args.command)
    if args.command in ("fit", "bench", "zeroshot"):
        cfg.datasets = _resolve_datasets(args, file_cfg)
        cfg.train_fraction = float(_option(args, file_cfg, "train_fraction", 1.0))
        if not (0.0 < cfg.train_fraction <= 1.0):
            raise ConfigError(f"--train-fraction must be in (0, 1], got {cfg.train_fraction}")
        grid = _option(args, file_cfg, "grid", None)
        if grid is not None:
            cfg.grid = grid if isinstance(grid, list) else _parse_int_list(grid, "--grid")
        cfg.lookback_max = int(_option(args, file_cfg, "lookback_max", 512))
        if grid is None and cfg.lookback_max != 512:
            cfg.grid = [p for p in DEFAULT_LOOKBACK_GRID if p <= cfg.lookback_max]
        cfg.kpss_alpha = float(_option(args, file_cfg, "kpss_alpha", 0.05))
        cfg.force_d = _option(args, file_cfg, "force_d", None)
        intercept = _option(args, file_cfg, "intercept", True)
        cfg.intercept = bool(intercept)
    if args.command in ("bench", "zeroshot"):
        horizons = _option(args, file_cfg, "horizons", None)
        if horizons is not None:
            cfg.horizons = (horizons if isinstance(horizons, list)
                            else _parse_int_list(horizons, "--horizons"))
        cfg.context_len = int(_option(args, file_cfg, "context_len", 512))
        cfg.stride = int(_option(args, file_cfg, "stride", 1))
        cfg.jobs = int(_option(args, file_cfg, "jobs", 1))
        if cfg.stride < 1 or cfg.jobs < 1:
            raise ConfigError("--stride and --jobs must be positive")
    if args.command == "bench":
        cfg.untuned_p = int(_option(args, file_cfg, "untuned_p", 512))
    if args.command == "zeroshot":
        cfg.zero_shot_window = int(_option(args, file_cfg, "zero_shot_window", 256))
        zs_grid = _option(args, file_cfg, "zs_grid", None)
        if zs_grid is not None:
            cfg.zero_shot_grid = (zs_grid if isinstance(zs_grid, list)
                                  else _parse_int_list(zs_grid, "--zs-grid"))
        cfg.amortized = bool(_option(args, file_cfg, "amortized", False))
    if args.command in ("bench", "zeroshot", "aggregate"):
        cfg.baseline = str(_option(args, file_cfg, "baseline", "Auto-ARIMA"))
        cfg.baseline_ref = _option(args, file_cfg, "baseline_ref", None)
        cfg.metric = str(_option(args, file_cfg, "metric", "rmse"))
    if args.command == "aggregate":
        records = _option(args, file_cfg, "records", None)
        if records:
            cfg.records = (records if isinstance(records, list)
                           else [r for r in records.split(",") if r])
    cfg.out = _option(args, file_cfg, "out", None)
    return cfg


def _run(argv) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "forecast":
        return cmd_forecast(args)
    cfg = _resolve_run_config(args)
    if args.command == "fit":
        return cmd_fit(cfg)
    if args.command == "bench":
        return _bench_common(cfg, zero_shot=False)
    if args.command == "zeroshot":
        return _bench_common(cfg, zero_shot=True)
    if args.command == "aggregate":
        return cmd_aggregate(cfg)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)
    try:
        return _run(argv)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return _EXIT_NUMERICAL
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
