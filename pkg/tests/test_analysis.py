"""Post-hoc analysis: stability statistics and sweep curves."""

from __future__ import annotations

import pytest

from cohscore.analysis import (
    load_curves_csv,
    plot_dev_accuracy,
    stability_stats,
    sweep_curves,
)
from cohscore.trainer import EvalRecord, TrainLog


def log_with_evals(label, series, start_step=100, every=100):
    log = TrainLog(regime="full", label=label)
    log.evals = [
        EvalRecord(step=start_step + i * every, accuracy=a, pair_count=10, score_ties=0)
        for i, a in enumerate(series)
    ]
    return log


class TestStabilityStats:
    def test_constant_series_has_zero_std(self):
        log = log_with_evals("full", [0.9] * 5)
        stats = stability_stats([log], warmup_steps=0)
        assert stats["full"].std == 0.0
        assert stats["full"].mean == pytest.approx(0.9)
        assert stats["full"].evals == 5

    def test_oscillating_series_has_larger_std(self):
        jumpy = log_with_evals("a", [0.9, 0.5, 0.9, 0.5])
        steady = log_with_evals("b", [0.8, 0.8, 0.8, 0.8])
        stats = stability_stats([jumpy, steady], warmup_steps=0)
        assert stats["a"].std > stats["b"].std

    def test_warmup_evals_are_excluded(self):
        log = log_with_evals("full", [0.1, 0.2, 0.9, 0.9, 0.9])
        stats = stability_stats([log], warmup_steps=200)
        # only the last three points (steps 300, 400, 500) survive
        assert stats["full"].evals == 3
        assert stats["full"].mean == pytest.approx(0.9)

    def test_same_label_runs_pool_their_series(self):
        runs = [log_with_evals("full", [0.8, 0.9, 1.0]) for _ in range(3)]
        stats = stability_stats(runs, warmup_steps=0)
        assert stats["full"].evals == 9

    def test_short_series_is_an_error(self):
        log = log_with_evals("full", [0.9, 0.9])
        with pytest.raises(ValueError, match="need >= 3"):
            stability_stats([log], warmup_steps=0)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            stability_stats([], warmup_steps=0)


def sweep_rows():
    return [
        {"parameter": "margin", "value": 0.05, "dataset": "test", "mean": 0.91, "std": 0.01},
        {"parameter": "margin", "value": 0.1, "dataset": "test", "mean": 0.93, "std": 0.02},
        {"parameter": "margin", "value": 0.05, "dataset": "probe", "mean": 0.8, "std": 0.0},
        {"parameter": "margin", "value": 0.1, "dataset": "probe", "mean": 0.85, "std": 0.0},
        {"parameter": "negatives", "value": 5, "dataset": "test", "mean": 0.9, "std": 0.0},
    ]


class TestSweepCurves:
    def test_two_point_grid_emits_csv_and_plot(self, tmp_path):
        curves = sweep_curves(sweep_rows(), "margin", tmp_path)
        assert {c.label for c in curves} == {"test", "probe"}
        assert (tmp_path / "sweep_margin.csv").exists()
        assert (tmp_path / "sweep_margin.png").exists()
        test_curve = next(c for c in curves if c.label == "test")
        assert test_curve.x == [0.05, 0.1]
        assert test_curve.y == [0.91, 0.93]

    def test_single_point_grid_emits_data_only(self, tmp_path):
        curves = sweep_curves(sweep_rows(), "negatives", tmp_path)
        assert len(curves) == 1
        assert (tmp_path / "sweep_negatives.csv").exists()
        assert not (tmp_path / "sweep_negatives.png").exists()

    def test_csv_round_trips_to_identical_curves(self, tmp_path):
        curves = sweep_curves(sweep_rows(), "margin", tmp_path)
        loaded = load_curves_csv(tmp_path / "sweep_margin.csv")
        by_label = {c.label: c for c in loaded}
        for curve in curves:
            twin = by_label[curve.label]
            assert twin.x == curve.x
            assert twin.y == curve.y
            assert twin.band == curve.band

    def test_data_file_is_a_pure_function_of_rows(self, tmp_path):
        sweep_curves(sweep_rows(), "margin", tmp_path / "a")
        sweep_curves(sweep_rows(), "margin", tmp_path / "b")
        first = (tmp_path / "a" / "sweep_margin.csv").read_bytes()
        second = (tmp_path / "b" / "sweep_margin.csv").read_bytes()
        assert first == second

    def test_unknown_parameter_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            sweep_curves(sweep_rows(), "dropout", tmp_path)


def test_plot_dev_accuracy_writes_file(tmp_path):
    logs = [
        log_with_evals("full", [0.8, 0.9, 0.95]),
        log_with_evals("full/no-momentum", [0.7, 0.9, 0.85]),
    ]
    path = tmp_path / "dev.png"
    plot_dev_accuracy(logs, path)
    assert path.exists()
    assert path.stat().st_size > 0
