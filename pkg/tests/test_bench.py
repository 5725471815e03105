import math

import numpy as np
import pytest

from autoar import (
    ArModel,
    EvalRecord,
    ForecastTask,
    aggregate,
    evaluate,
    fit,
    load_reference_results,
    prepare,
    reference_results_path,
)
from autoar.bench import format_aggregate_table, sample_counts, write_records
from autoar.dataio import SplitSpec

from conftest import ar1_series, make_series


def persistence_model(d: int = 0) -> ArModel:
    coeffs = np.zeros(3) if d == 1 else np.array([1.0, 0.0, 0.0])
    return ArModel(intercept=0.0, coeffs=coeffs, d=d)


class TestEvaluate:
    def test_zero_error_on_constant_series(self):
        context = make_series(np.full((10, 2), 4.0))
        test = make_series(np.full((6, 2), 4.0))
        task = ForecastTask(dataset_id="const", horizon=2)
        rec = evaluate(persistence_model(), task, test, context, method="persistence")
        assert rec.mse == 0.0 and rec.mae == 0.0 and rec.rmse == 0.0
        assert rec.n_windows == 5

    def test_hand_arithmetic(self):
        # one window, one channel: predictions [1, 2] against truth [0, 2]
        def predictor(context, horizon):
            return np.array([[1.0], [2.0]])

        context = make_series(np.zeros((4, 1)))
        test = make_series(np.array([[0.0], [2.0]]))
        task = ForecastTask(dataset_id="toy", horizon=2, context_len=4)
        rec = evaluate(predictor, task, test, context, method="fixed")
        assert rec.mse == pytest.approx(0.5)
        assert rec.mae == pytest.approx(0.5)
        assert rec.rmse == pytest.approx(math.sqrt(0.5))
        assert rec.n_windows == 1

    def test_rmse_is_sqrt_mse(self, rng):
        model, _ = fit(ar1_series(400, seed=2, channels=2), p=4)
        test = make_series(rng.normal(size=(50, 2)))
        context = make_series(rng.normal(size=(30, 2)))
        rec = evaluate(model, ForecastTask(dataset_id="x", horizon=5),
                       test, context, method="m")
        assert abs(rec.rmse ** 2 - rec.mse) < 1e-12

    def test_window_count_and_stride(self, rng):
        model = persistence_model()
        test = make_series(rng.normal(size=(20, 1)))
        context = make_series(rng.normal(size=(10, 1)))
        rec = evaluate(model, ForecastTask(dataset_id="x", horizon=4),
                       test, context, method="m")
        assert rec.n_windows == 17
        rec2 = evaluate(model, ForecastTask(dataset_id="x", horizon=4, stride=5),
                        test, context, method="m")
        assert rec2.n_windows == 4

    def test_pooled_mean_identity(self, rng):
        # stride-2 evaluations over even and odd anchors together cover the
        # stride-1 window set; pooled means must recombine exactly
        model, _ = fit(ar1_series(300, seed=5), p=3)
        values = rng.normal(size=(41, 1))
        context = make_series(rng.normal(size=(20, 1)))
        test = make_series(values)
        horizon = 4
        full = evaluate(model, ForecastTask(dataset_id="x", horizon=horizon),
                        test, context, method="m")
        even = evaluate(model, ForecastTask(dataset_id="x", horizon=horizon, stride=2),
                        test, context, method="m")
        shifted_ctx = make_series(np.vstack([context.values, values[:1]]))
        odd = evaluate(model, ForecastTask(dataset_id="x", horizon=horizon, stride=2),
                       make_series(values[1:]), shifted_ctx, method="m")
        assert even.n_windows + odd.n_windows == full.n_windows
        pooled_mse = (
            even.mse * even.n_windows + odd.mse * odd.n_windows
        ) / full.n_windows
        pooled_mae = (
            even.mae * even.n_windows + odd.mae * odd.n_windows
        ) / full.n_windows
        assert pooled_mse == pytest.approx(full.mse, rel=1e-12, abs=1e-15)
        assert pooled_mae == pytest.approx(full.mae, rel=1e-12, abs=1e-15)

    def test_parallel_matches_serial(self, rng):
        model, _ = fit(ar1_series(500, seed=6, channels=3), p=8, d=1)
        test = make_series(rng.normal(size=(120, 3)))
        context = make_series(rng.normal(size=(40, 3)))
        task = ForecastTask(dataset_id="x", horizon=12)
        serial = evaluate(model, task, test, context, method="m", jobs=1)
        parallel = evaluate(model, task, test, context, method="m", jobs=4)
        assert serial.mse == parallel.mse
        assert serial.mae == parallel.mae

    def test_parallel_matches_serial_callable(self, rng):
        def predictor(context, horizon):
            return np.tile(context.values[-1], (horizon, 1))

        test = make_series(rng.normal(size=(40, 2)))
        context = make_series(rng.normal(size=(16, 2)))
        task = ForecastTask(dataset_id="x", horizon=3, context_len=16)
        serial = evaluate(predictor, task, test, context, method="m", jobs=1)
        parallel = evaluate(predictor, task, test, context, method="m", jobs=3)
        assert serial.mse == parallel.mse

    def test_contexts_reach_into_history(self):
        # persistence on a ramp: the first window's context ends at the last
        # history row, so its one-step error is exactly 1 at every step
        context = make_series(np.arange(10, dtype=float))
        test = make_series(np.arange(10, 14, dtype=float))
        model = ArModel(intercept=0.0, coeffs=np.array([1.0]), d=0)
        rec = evaluate(model, ForecastTask(dataset_id="ramp", horizon=1),
                       test, context, method="m")
        assert rec.mse == pytest.approx(1.0)

    def test_test_split_shorter_than_horizon(self):
        with pytest.raises(ValueError, match="shorter than the horizon"):
            evaluate(persistence_model(), ForecastTask(dataset_id="x", horizon=10),
                     make_series(np.zeros((4, 1))), make_series(np.zeros((8, 1))),
                     method="m")

    def test_history_too_short_for_model(self):
        model = ArModel(intercept=0.0, coeffs=np.zeros(50), d=1)
        with pytest.raises(ValueError, match="cannot provide"):
            evaluate(model, ForecastTask(dataset_id="x", horizon=2),
                     make_series(np.zeros((8, 1))), make_series(np.zeros((10, 1))),
                     method="m")

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="same channels"):
            evaluate(persistence_model(), ForecastTask(dataset_id="x", horizon=1),
                     make_series(np.zeros((8, 2))), make_series(np.zeros((8, 1))),
                     method="m")


class TestAggregate:
    def records_from(self, table, metric="mse"):
        recs = []
        for method, by_task in table.items():
            for (ds, h), v in by_task.items():
                recs.append(EvalRecord(
                    dataset=ds, horizon=h, method=method,
                    mse=v if metric == "mse" else None,
                    mae=v if metric == "mae" else None,
                    rmse=math.sqrt(v) if metric == "mse" else None,
                ))
        return recs

    def test_baseline_improvement_is_exactly_zero(self):
        recs = self.records_from({
            "base": {("a", 1): 4.0, ("b", 1): 9.0},
            "other": {("a", 1): 1.0, ("b", 1): 4.0},
        })
        report = aggregate(recs, baseline="base")
        base_row = report.per_method["base"]
        assert base_row.mean_pct_improvement == 0.0
        assert base_row.median_pct_improvement == 0.0

    def test_hand_computed_improvement(self):
        # mse 0.646 vs 0.357 on one task: rmse improvement is
        # 100 * (sqrt(.646) - sqrt(.357)) / sqrt(.646) = 25.66%
        recs = self.records_from({
            "base": {("ETTh1", 96): 0.646},
            "tuned": {("ETTh1", 96): 0.357},
        })
        report = aggregate(recs, baseline="base")
        assert report.per_method["tuned"].mean_pct_improvement == pytest.approx(25.66, abs=0.01)

    def test_average_rank_with_ties(self):
        recs = self.records_from({
            "m1": {("a", 1): 1.0, ("a", 2): 1.0},
            "m2": {("a", 1): 1.0, ("a", 2): 4.0},
            "m3": {("a", 1): 9.0, ("a", 2): 9.0},
        })
        report = aggregate(recs, baseline="m3")
        # task (a,1) ties m1/m2 at rank 1.5; task (a,2) ranks them 1 and 2
        assert report.per_method["m1"].average_rank == pytest.approx(1.25)
        assert report.per_method["m2"].average_rank == pytest.approx(1.75)
        assert report.per_method["m3"].average_rank == pytest.approx(3.0)

    def test_rank_scale_invariance(self):
        base = {
            "m1": {("a", 1): 1.0, ("b", 1): 5.0},
            "m2": {("a", 1): 2.0, ("b", 1): 4.0},
        }
        scaled = {m: dict(v) for m, v in base.items()}
        for m in scaled:
            scaled[m][("a", 1)] *= 17.0
        r1 = aggregate(self.records_from(base), baseline="m1")
        r2 = aggregate(self.records_from(scaled), baseline="m1")
        for m in base:
            assert r1.per_method[m].average_rank == r2.per_method[m].average_rank

    def test_record_order_invariance(self):
        recs = self.records_from({
            "m1": {("a", 1): 1.0, ("b", 1): 5.0},
            "m2": {("a", 1): 2.0, ("b", 1): 4.0},
        })
        r1 = aggregate(recs, baseline="m1")
        r2 = aggregate(list(reversed(recs)), baseline="m1")
        assert r1 == r2

    def test_methods_missing_a_task_are_excluded_from_its_ranking(self):
        recs = self.records_from({
            "base": {("a", 1): 4.0, ("b", 1): 4.0},
            "partial": {("a", 1): 1.0},
            "full": {("a", 1): 9.0, ("b", 1): 1.0},
        })
        report = aggregate(recs, baseline="base")
        assert report.per_method["partial"].n_tasks == 1
        assert report.per_method["partial"].average_rank == 1.0
        # on task b only base and full compete
        assert report.per_method["full"].average_rank == pytest.approx((3 + 1) / 2)

    def test_baseline_missing_task(self):
        recs = self.records_from({
            "base": {("a", 1): 4.0},
            "m": {("a", 1): 1.0, ("b", 1): 2.0},
        })
        with pytest.raises(ValueError, match="baseline 'base' missing"):
            aggregate(recs, baseline="base")

    def test_empty_records(self):
        with pytest.raises(ValueError, match="no records"):
            aggregate([], baseline="x")

    def test_duplicate_method_task(self):
        recs = self.records_from({"m": {("a", 1): 1.0}}) * 2
        with pytest.raises(ValueError, match="duplicate score"):
            aggregate(recs, baseline="m")

    def test_mae_mode_uses_mae(self):
        recs = self.records_from({
            "base": {("a", 1): 0.4},
            "m": {("a", 1): 0.2},
        }, metric="mae")
        report = aggregate(recs, baseline="base", metric="mae")
        assert report.per_method["m"].mean_pct_improvement == pytest.approx(50.0)
        with pytest.raises(ValueError, match="no records carry"):
            aggregate(recs, baseline="base", metric="rmse")


class TestReferenceResults:
    def test_parse_single_row(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text(
            "dataset,horizon,method,metric,value\nETTh1,96,Auto-ARIMA,mse,0.646\n"
        )
        recs = load_reference_results(path)
        assert len(recs) == 1
        assert recs[0].rmse == pytest.approx(0.8037, abs=2e-4)
        assert recs[0].mae is None

    def test_duplicate_rows_rejected(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text(
            "dataset,horizon,method,metric,value\n"
            "ETTh1,96,Auto-ARIMA,mse,0.646\n"
            "ETTh1,96,Auto-ARIMA,mse,0.646\n"
        )
        with pytest.raises(ValueError, match="duplicate"):
            load_reference_results(path)

    def test_unknown_metric_rejected(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("dataset,horizon,method,metric,value\nETTh1,96,m,mape,0.1\n")
        with pytest.raises(ValueError, match="unknown metric"):
            load_reference_results(path)

    def test_malformed_row_rejected(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("dataset,horizon,method,metric,value\nETTh1,ninety,m,mse,0.1\n")
        with pytest.raises(ValueError, match="malformed"):
            load_reference_results(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("ds,h,m,metric,value\n")
        with pytest.raises(ValueError, match="expected header"):
            load_reference_results(path)

    def test_mae_only_record_supports_mae_aggregation(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text(
            "dataset,horizon,method,metric,value\n"
            "ETTh1,96,m,mae,0.4\nETTh1,96,base,mae,0.8\n"
        )
        recs = load_reference_results(path)
        assert all(r.mse is None for r in recs)
        report = aggregate(recs, baseline="base", metric="mae")
        assert report.per_method["m"].mean_pct_improvement == pytest.approx(50.0)

    def test_round_trip_through_writer(self, tmp_path, rng):
        model, _ = fit(ar1_series(300, seed=1, channels=2), p=2)
        test = make_series(rng.normal(size=(30, 2)))
        context = make_series(rng.normal(size=(20, 2)))
        rec = evaluate(model, ForecastTask(dataset_id="syn", horizon=3),
                       test, context, method="mine")
        path = tmp_path / "records.csv"
        write_records([rec], path)
        loaded = load_reference_results(path)
        assert len(loaded) == 1
        assert loaded[0] == rec

    def test_bundled_files(self):
        mse_recs = load_reference_results(reference_results_path("mse"))
        mae_recs = load_reference_results(reference_results_path("mae"))
        assert len(mse_recs) == 13 * 28
        assert len(mae_recs) == 8 * 28
        lookup = {(r.dataset, r.horizon, r.method): r for r in mse_recs}
        assert lookup[("ETTh1", 96, "Auto-AR")].mse == 0.357
        assert lookup[("ETTh1", 96, "Auto-ARIMA")].mse == 0.646
        assert lookup[("Traffic", 720, "AR (d=0)")].mse == 0.464


class TestPrepare:
    def test_standardization_and_layout(self, rng):
        values = rng.normal(5.0, 3.0, size=(200, 2))
        series = make_series(values)
        prepared = prepare(series, SplitSpec.fractional())
        assert prepared.row_counts == (140, 20, 40)
        np.testing.assert_allclose(prepared.train.values.mean(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(prepared.train.values.var(axis=0), 1, atol=1e-10)
        assert prepared.history.t_len == 160
        # history ends exactly where test begins
        joined = np.vstack([prepared.history.values, prepared.test.values])
        expected = prepared.scaler.transform(series).values[:200]
        np.testing.assert_allclose(joined, expected, rtol=1e-12)

    def test_subsampled_scaler_sees_only_the_tail(self, rng):
        # the last quarter of the 160 training rows sits at level 0, the
        # earlier rows at level 100; the subsampled scaler must only see 0
        values = np.vstack([
            rng.normal(100.0, 1.0, size=(120, 1)),
            rng.normal(0.0, 1.0, size=(80, 1)),
        ])
        prepared = prepare(make_series(values), SplitSpec.explicit(160, 20, 20),
                           train_fraction=0.25)
        assert prepared.train.t_len == 40
        assert abs(prepared.scaler.mean[0]) < 5.0

    def test_sample_counts_helper(self):
        assert sample_counts(8640, 2880, 2880, 512, 96) == (8033, 2785, 2785)
        assert sample_counts(100, 50, 50, 10, 5) == (86, 46, 46)


class TestReportFormatting:
    def test_table_lists_best_first(self):
        recs = [
            EvalRecord(dataset="a", horizon=1, method="worse", mse=4.0, rmse=2.0),
            EvalRecord(dataset="a", horizon=1, method="better", mse=1.0, rmse=1.0),
        ]
        report = aggregate(recs, baseline="worse")
        table = format_aggregate_table(report)
        assert table.index("better") < table.index("worse")
        assert "baseline: worse" in table
