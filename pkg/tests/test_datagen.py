"""Dataset generation: determinism, outcome scales, entry-time modes."""

import numpy as np
import pytest
from scipy.special import expit

from ncc_sim.datagen import generate_trial
from ncc_sim.design import Scenario, default_two_period_design


def continuous_scenario(**kw):
    base = dict(
        endpoint="continuous",
        control_response=0.0,
        effects=(0.25, 0.25),
        trend_pattern="step",
        trend_strength=(0.1, 0.1, 0.1),
    )
    base.update(kw)
    return Scenario(**base)


class TestGenerateTrial:
    def test_shapes_and_counts(self):
        d = default_two_period_design()
        ds = generate_trial(continuous_scenario(), d, seed=1)
        assert ds.n == 750
        assert list(ds.j[:3]) == [1, 2, 3]
        assert np.array_equal(ds.t, ds.j.astype(float))
        for arm, period, want in [(0, 1, 125), (0, 2, 125), (1, 1, 125), (1, 2, 125), (2, 1, 0), (2, 2, 250)]:
            assert ds.cell_count(arm, period) == want

    def test_seed_determinism(self):
        d = default_two_period_design()
        a = generate_trial(continuous_scenario(), d, seed=99)
        b = generate_trial(continuous_scenario(), d, seed=99)
        c = generate_trial(continuous_scenario(), d, seed=100)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.arm, b.arm)
        assert not np.array_equal(a.y, c.y)

    def test_continuous_cell_means_near_truth(self):
        d = default_two_period_design(n_per_cell=500, n_new_arm=1000, block_sizes=(4, 12))
        ds = generate_trial(continuous_scenario(), d, seed=7)
        # period-2 cells carry the step: control 0.1, arm1 0.35, arm2 0.35
        se = 1.0 / np.sqrt(500)
        assert ds.cell_mean(0, 1) == pytest.approx(0.0, abs=4 * se)
        assert ds.cell_mean(0, 2) == pytest.approx(0.1, abs=4 * se)
        assert ds.cell_mean(1, 2) == pytest.approx(0.35, abs=4 * se)
        assert ds.cell_mean(2, 2) == pytest.approx(0.35, abs=4 * se)

    def test_binary_outcomes_and_rates(self):
        d = default_two_period_design(n_per_cell=500, n_new_arm=1000, block_sizes=(4, 12))
        sc = Scenario.from_binary_rates(0.7, [1.8, 1.8], "step", [0.25, 0.25, 0.25])
        ds = generate_trial(sc, d, seed=3)
        assert set(np.unique(ds.y)) <= {0.0, 1.0}
        p02 = expit(np.log(0.7 / 0.3) + 0.25)
        assert ds.cell_mean(0, 2) == pytest.approx(p02, abs=4 * np.sqrt(0.25 / 500))

    def test_random_entry_times_sorted_and_used(self):
        d = default_two_period_design()
        sc = continuous_scenario(entry_time_mode="random_uniform")
        ds = generate_trial(sc, d, seed=5)
        assert np.all(np.diff(ds.t) >= 0)
        assert ds.t.min() > 0 and ds.t.max() <= 750
        assert not np.array_equal(ds.t, ds.j.astype(float))
        ds2 = generate_trial(sc, d, seed=5)
        assert np.array_equal(ds.t, ds2.t)

    def test_validation_can_reject(self):
        d = default_two_period_design()
        bad = continuous_scenario(trend_pattern="inverse_u")  # missing peak_index
        with pytest.raises(ValueError, match="missing_peak_index"):
            generate_trial(bad, d, seed=1)
        # the simulation loop skips re-validation
        generate_trial(bad.with_changes(trend_pattern="step"), d, seed=1, validate=False)

    def test_cell_mean_empty_cell_raises(self):
        d = default_two_period_design()
        ds = generate_trial(continuous_scenario(), d, seed=1)
        with pytest.raises(ValueError, match="arm 2, period 1"):
            ds.cell_mean(2, 1)
        table = ds.cell_mean_table()
        assert np.isnan(table[2, 0])
        assert table[0, 0] == pytest.approx(ds.cell_mean(0, 1))

    def test_csv_roundtrip(self, tmp_path):
        d = default_two_period_design(n_per_cell=5, n_new_arm=10, block_sizes=(2, 4))
        ds = generate_trial(continuous_scenario(), d, seed=2)
        path = tmp_path / "trial.csv"
        ds.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "j,t,arm,period,y"
        assert len(lines) == ds.n + 1
        j, t, arm, period, y = lines[1].split(",")
        assert int(j) == 1 and int(period) == 1
        assert float(y) == ds.y[0]
