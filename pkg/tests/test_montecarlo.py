"""Tests for grid configuration, the replicate loop, and result aggregation.

Aggregation is checked against closed-form cases, the configuration parser
against its documented schema, and the runner against the requirement that
worker count never changes the numbers.
"""

import csv
import dataclasses
import json
import math

import numpy as np
import pytest
from scipy.special import logit

from ncc_sim.inference import AnalysisModel
from ncc_sim.montecarlo import (
    AXIS_PARAMS,
    CSV_COLUMNS,
    ConfigError,
    _chunk_bounds,
    grid_from_config,
    provenance_record,
    run_grid,
    summarize,
    write_csv,
    write_json,
    write_provenance,
)


def base_config(**kw):
    doc = {
        "name": "unit",
        "endpoint": "continuous",
        "replicates": 50,
        "master_seed": 424242,
        "models": [{"kind": "alltc_step"}, {"kind": "separate"}],
        "scenario": {
            "control_mean": 0.0,
            "sigma": 1.0,
            "effects": [0.1, 0.25],
            "pattern": "step",
            "trend_strength": [0.1, 0.1, 0.1],
        },
    }
    doc.update(kw)
    return doc


class TestSummarize:
    def test_exact_estimates(self):
        stats = summarize(np.full(20, 0.25), np.ones(20, dtype=bool), 0.25)
        assert stats.n_reps == 20
        assert stats.reject_rate == 1.0
        assert stats.mc_se == 0.0
        assert stats.bias == 0.0
        assert stats.rmse == 0.0
        assert stats.n_failures == 0

    def test_symmetric_pair(self):
        stats = summarize([0.3 - 0.05, 0.3 + 0.05], [False, True], 0.3)
        assert stats.bias == pytest.approx(0.0, abs=1e-15)
        assert stats.rmse == pytest.approx(0.05, abs=1e-15)
        assert stats.reject_rate == 0.5
        assert stats.mc_se == pytest.approx(math.sqrt(0.25 / 2), abs=1e-15)

    def test_rmse_matches_spread_of_normal_draws(self):
        rng = np.random.default_rng(710)
        draws = 0.2 + 0.11 * rng.standard_normal(10_000)
        stats = summarize(draws, np.zeros(10_000, dtype=bool), 0.2)
        assert stats.rmse == pytest.approx(0.11, rel=0.05)
        assert abs(stats.bias) < 0.005
        assert stats.rmse >= abs(stats.bias)

    def test_nan_estimates_count_as_failures(self):
        est = np.array([0.1, np.nan, 0.3, np.nan, np.nan])
        rej = np.array([True, False, False, False, False])
        stats = summarize(est, rej, 0.2)
        assert stats.n_failures == 3
        assert stats.n_reps == 5
        assert stats.mean_est == pytest.approx(0.2, abs=1e-15)
        assert stats.reject_rate == pytest.approx(0.2, abs=1e-15)

    def test_all_failures(self):
        stats = summarize(np.full(4, np.nan), np.zeros(4, dtype=bool), 0.0)
        assert stats.n_failures == 4
        assert math.isnan(stats.mean_est)
        assert math.isnan(stats.rmse)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            summarize([], [], 0.0)
        with pytest.raises(ValueError):
            summarize([0.1, 0.2], [True], 0.0)


class TestGridFromConfig:
    def test_minimal_config(self):
        grid = grid_from_config(base_config())
        assert grid.name == "unit"
        assert grid.replicates == 50
        assert grid.master_seed == 424242
        assert grid.alpha == 0.025
        assert grid.tested_arm == 2
        assert len(grid.points) == 1
        assert grid.points[0].point_id == "base"
        assert grid.points[0].hypothesis == "H1"
        assert grid.models == (AnalysisModel("alltc_step"), AnalysisModel("separate"))
        assert grid.design.total_size == 750

    def test_sweep_cross_product_and_ids(self):
        doc = base_config(
            sweeps=[
                {
                    "axes": [
                        {"param": "hypothesis", "values": ["H0", "H1"]},
                        {"param": "lambda1", "values": [0, 0.1]},
                    ]
                }
            ]
        )
        grid = grid_from_config(doc)
        ids = [p.point_id for p in grid.points]
        assert ids == [
            "hypothesis=H0,lambda1=0",
            "hypothesis=H0,lambda1=0.1",
            "hypothesis=H1,lambda1=0",
            "hypothesis=H1,lambda1=0.1",
        ]
        strengths = [p.scenario.trend_strength for p in grid.points]
        assert strengths == [(0.1, 0.0, 0.1), (0.1, 0.1, 0.1)] * 2

    def test_h0_zeroes_tested_arm_effect_only(self):
        doc = base_config(sweeps=[{"axes": [{"param": "hypothesis", "values": ["H0", "H1"]}]}])
        grid = grid_from_config(doc)
        h0, h1 = grid.points
        assert h0.scenario.effects == (0.1, 0.0)
        assert h1.scenario.effects == (0.1, 0.25)

    def test_hypothesis_inferred_from_effect(self):
        doc = base_config()
        doc["scenario"]["effects"] = [0.1, 0.0]
        assert grid_from_config(doc).points[0].hypothesis == "H0"

    def test_sweep_label_and_overrides(self):
        doc = base_config(
            sweeps=[
                {"label": "null", "overrides": {"effects": [0.1, 0.0]}, "axes": []},
                {"label": "alt", "axes": []},
            ]
        )
        grid = grid_from_config(doc)
        assert [p.point_id for p in grid.points] == ["null", "alt"]
        assert grid.points[0].scenario.effects == (0.1, 0.0)
        assert grid.points[0].hypothesis == "H0"
        assert grid.points[1].scenario.effects == (0.1, 0.25)

    def test_arm1_period2_mean_axis(self):
        doc = base_config(
            sweeps=[{"axes": [{"param": "arm1_period2_mean", "values": [0.15, 0.35]}]}]
        )
        grid = grid_from_config(doc)
        # lambda1 = X - (control mean + theta1) with theta1 = 0.1
        assert grid.points[0].scenario.trend_strength[1] == pytest.approx(0.05, abs=1e-15)
        assert grid.points[1].scenario.trend_strength[1] == pytest.approx(0.25, abs=1e-15)

    def test_arm1_period2_rate_axis(self):
        p11 = 0.8076923076923077  # odds 0.7/0.3 * 1.8, so lambda1 = 0 exactly
        doc = {
            "endpoint": "binary",
            "replicates": 10,
            "master_seed": 7,
            "models": [{"kind": "alltc_step"}],
            "scenario": {
                "control_rate": 0.7,
                "odds_ratios": [1.8, 1.8],
                "pattern": "step",
                "trend_strength": [0.25, 0.25, 0.25],
            },
            "sweeps": [{"axes": [{"param": "arm1_period2_rate", "values": [p11, 0.9]}]}],
        }
        grid = grid_from_config(doc)
        lam1 = grid.points[0].scenario.trend_strength[1]
        assert lam1 == pytest.approx(0.0, abs=1e-12)
        expect = logit(0.9) - (logit(0.7) + math.log(1.8))
        assert grid.points[1].scenario.trend_strength[1] == pytest.approx(expect, abs=1e-12)

    def test_peak_index_axis(self):
        doc = base_config(
            sweeps=[
                {
                    "axes": [
                        {"param": "pattern", "values": ["inverse_u"]},
                        {"param": "peak_index", "values": [500]},
                    ]
                }
            ]
        )
        point = grid_from_config(doc).points[0]
        assert point.scenario.trend_pattern == "inverse_u"
        assert point.scenario.peak_index == 500

    def test_custom_design_block(self):
        doc = base_config(
            design={"cell_sizes": [[5, 5], [5, 5], [0, 10]], "block_sizes": [4, 8]}
        )
        grid = grid_from_config(doc)
        assert grid.design.total_size == 30

    @pytest.mark.parametrize(
        "mutate,match",
        [
            (lambda d: d.pop("endpoint"), "endpoint"),
            (lambda d: d.pop("master_seed"), "master_seed"),
            (lambda d: d.pop("models"), "models"),
            (lambda d: d.pop("scenario"), "scenario"),
            (lambda d: d.update(replicates=0), "replicates"),
            (lambda d: d.update(replicates="many"), "integer"),
            (lambda d: d.update(alpha=1.5), "alpha"),
            (lambda d: d.update(endpoint="count"), "endpoint"),
            (lambda d: d.update(tested_arm=5), "tested_arm"),
            (lambda d: d.update(extra_field=1), "unknown field"),
            (lambda d: d.update(models=[]), "models"),
            (lambda d: d.update(models=[{"variance_mode": "homoscedastic"}]), "kind"),
            (lambda d: d.update(models=[{"kind": "anova"}]), r"models\[0\]"),
            (lambda d: d["scenario"].pop("trend_strength"), "trend_strength"),
            (lambda d: d["scenario"].update(control_rate=0.7), "binary endpoints"),
            (lambda d: d.update(sweeps=[{"axes": [{"param": "theta2", "values": [1]}]}]), "unknown axis"),
            (lambda d: d.update(sweeps=[{"axes": [{"param": "lambda1", "values": []}]}]), "empty"),
            (
                lambda d: d.update(sweeps=[{"axes": [{"param": "hypothesis", "values": ["H2"]}]}]),
                "H0 or H1",
            ),
            (lambda d: d.update(sweeps=[{"bad": 1}]), "unknown field"),
        ],
    )
    def test_rejects_malformed_config(self, mutate, match):
        doc = base_config()
        mutate(doc)
        with pytest.raises(ConfigError, match=match):
            grid_from_config(doc)

    def test_rejects_per_period_for_binary(self):
        doc = {
            "endpoint": "binary",
            "replicates": 10,
            "master_seed": 7,
            "models": [{"kind": "alltc_step", "variance_mode": "per_period"}],
            "scenario": {
                "control_rate": 0.7,
                "odds_ratios": [1.8, 1.8],
                "pattern": "step",
                "trend_strength": [0.25, 0.25, 0.25],
            },
        }
        with pytest.raises(ConfigError, match="continuous endpoints only"):
            grid_from_config(doc)

    def test_rejects_sigma_for_binary(self):
        doc = {
            "endpoint": "binary",
            "replicates": 10,
            "master_seed": 7,
            "models": [{"kind": "alltc_step"}],
            "scenario": {
                "control_rate": 0.7,
                "odds_ratios": [1.8, 1.8],
                "sigma": 1.0,
                "pattern": "step",
                "trend_strength": [0.25, 0.25, 0.25],
            },
        }
        with pytest.raises(ConfigError, match="continuous endpoints"):
            grid_from_config(doc)

    def test_rejects_non_object_root(self):
        with pytest.raises(ConfigError, match="JSON object"):
            grid_from_config([1, 2, 3])

    def test_rejects_mean_axis_without_step_pattern(self):
        doc = base_config()
        doc["scenario"]["pattern"] = "linear"
        doc["sweeps"] = [{"axes": [{"param": "arm1_period2_mean", "values": [0.3]}]}]
        with pytest.raises(ConfigError, match="step trend"):
            grid_from_config(doc)

    def test_axis_params_registry(self):
        assert "arm1_period2_mean" in AXIS_PARAMS
        assert "hypothesis" in AXIS_PARAMS


class TestRunGrid:
    def test_summary_layout(self):
        grid = grid_from_config(base_config(replicates=30))
        rows = run_grid(grid)
        assert len(rows) == 2
        assert [r.model for r in rows] == ["alltc_step", "separate"]
        for r in rows:
            assert r.scenario_id == "base"
            assert r.endpoint == "continuous"
            assert r.pattern == "step"
            assert r.hypothesis == "H1"
            assert r.theta1 == 0.1 and r.theta2 == 0.25
            assert r.lambda0 == r.lambda1 == r.lambda2 == 0.1
            assert r.n_reps == 30
            assert 0.0 <= r.reject_rate <= 1.0
            assert r.n_failures == 0
            assert len(r.as_row()) == len(CSV_COLUMNS)

    def test_runs_are_deterministic(self):
        grid = grid_from_config(base_config(replicates=25))
        assert run_grid(grid) == run_grid(grid)

    def test_worker_count_does_not_change_results(self):
        grid = grid_from_config(base_config(replicates=40))
        assert run_grid(grid, workers=1) == run_grid(grid, workers=3)

    def test_power_increases_with_effect(self):
        doc = base_config(
            replicates=300,
            models=[{"kind": "alltc_step"}, {"kind": "separate"}],
            sweeps=[
                {"label": "null", "overrides": {"effects": [0.1, 0.0]}, "axes": []},
                {"label": "mid", "overrides": {"effects": [0.1, 0.2]}, "axes": []},
                {"label": "big", "overrides": {"effects": [0.1, 0.4]}, "axes": []},
            ],
        )
        rows = run_grid(grid_from_config(doc))
        for kind in ("alltc_step", "separate"):
            rates = [r.reject_rate for r in rows if r.model == kind]
            assert rates[0] < rates[1] < rates[2]
            assert rates[2] > 0.9

    def test_null_rejection_rate_near_alpha(self):
        doc = base_config(replicates=400, models=[{"kind": "separate"}])
        doc["scenario"]["effects"] = [0.1, 0.0]
        rows = run_grid(grid_from_config(doc))
        band = 3.0 * math.sqrt(0.025 * 0.975 / 400)
        assert abs(rows[0].reject_rate - 0.025) <= band

    def test_grid_validation(self):
        grid = grid_from_config(base_config())
        with pytest.raises(ValueError, match="replicates"):
            run_grid(dataclasses.replace(grid, replicates=0))
        with pytest.raises(ValueError, match="points"):
            run_grid(dataclasses.replace(grid, points=()))
        with pytest.raises(ValueError, match="models"):
            run_grid(dataclasses.replace(grid, models=()))

    def test_chunk_bounds_partition(self):
        assert _chunk_bounds(10, 3) == [(0, 4), (4, 8), (8, 10)]
        assert _chunk_bounds(5, 8) == [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]


class TestStepTrendInflation:
    def test_type_one_error_grows_with_drift_gap(self):
        """With a step trend and equal drift in control and tested arm, the
        adjusted one-sided test under H0 inflates as arm 1 drifts away from
        control; the inflation clears 0.05 when the drift gap reaches 0.2."""
        doc = {
            "endpoint": "continuous",
            "replicates": 10_000,
            "master_seed": 20260822,
            "models": [{"kind": "alltc_step"}],
            "scenario": {
                "control_mean": 0.0,
                "sigma": 1.0,
                "effects": [0.25, 0.25],
                "pattern": "step",
                "trend_strength": [0.1, 0.1, 0.1],
            },
            "sweeps": [
                {
                    "axes": [
                        {"param": "hypothesis", "values": ["H0"]},
                        {"param": "arm1_period2_mean", "values": [0.15, 0.25]},
                    ]
                }
            ],
        }
        rows = run_grid(grid_from_config(doc))
        # X = 0.15 puts arm 1's drift 0.2 below control's, X = 0.25 puts it 0.1 below
        gap_02, gap_01 = rows[0].reject_rate, rows[1].reject_rate
        assert gap_02 > 0.05
        assert gap_02 > gap_01
        assert gap_01 > 0.025


@pytest.fixture(scope="module")
def rows():
    return run_grid(grid_from_config(base_config(replicates=20)))


class TestOutput:
    def test_csv_full_precision(self, rows, tmp_path):
        path = tmp_path / "out.csv"
        write_csv(rows, path)
        with open(path, newline="") as fh:
            records = list(csv.DictReader(fh))
        assert len(records) == len(rows)
        assert tuple(records[0]) == CSV_COLUMNS
        assert float(records[0]["mean_est"]) == rows[0].mean_est
        assert records[0]["model"] == "alltc_step"

    def test_json_output(self, rows, tmp_path):
        path = tmp_path / "out.json"
        write_json(rows, path)
        docs = json.loads(path.read_text())
        assert len(docs) == len(rows)
        assert set(docs[0]) == set(CSV_COLUMNS)
        assert docs[0]["n_reps"] == 20

    def test_provenance_record(self, tmp_path):
        doc = base_config()
        record = provenance_record(doc, "out.csv")
        assert record["config"] is doc
        assert record["master_seed"] == 424242
        assert record["output"] == "out.csv"
        assert record["columns"] == list(CSV_COLUMNS)
        assert record["package"].startswith("ncc-sim ")
        assert record["backend"] in ("compiled", "python")
        path = tmp_path / "out.provenance.json"
        write_provenance(doc, "out.csv", path)
        assert json.loads(path.read_text())["config"]["master_seed"] == 424242
