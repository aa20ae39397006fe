"""Trial data generation.

One simulated trial is a full enrollment sequence: arm labels from the
randomization procedure, an entry time per patient, and one outcome per
patient drawn on the model scale of the endpoint.  All draws come from a
single generator in a fixed order (assignments period by period, then entry
times, then outcomes), so a seed pins down the whole dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .design import (
    Scenario,
    TrialDesign,
    time_trend_value,
    validate_design,
    validate_scenario,
)
from .randomization import AssignmentSequence, as_generator, assignment_sequence

__all__ = ["TrialDataset", "generate_trial", "time_trend_value"]


@dataclass(frozen=True)
class TrialDataset:
    """One simulated trial, in enrollment order.

    ``j`` is the 1-based enrollment index, ``t`` the entry time used by the
    trend (equal to ``j`` under deterministic entry), ``arm`` and ``period``
    the arm label and calendar period per patient, and ``y`` the outcome
    (binary outcomes are stored as 0.0/1.0).
    """

    design: TrialDesign
    scenario: Scenario
    j: np.ndarray
    t: np.ndarray
    arm: np.ndarray
    period: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def rows(self, arms=None, periods=None) -> np.ndarray:
        """Boolean mask selecting patients by arm and/or period."""
        mask = np.ones(self.n, dtype=bool)
        if arms is not None:
            mask &= np.isin(self.arm, np.asarray(list(arms)))
        if periods is not None:
            mask &= np.isin(self.period, np.asarray(list(periods)))
        return mask

    def cell_count(self, arm: int, period: int) -> int:
        return int(np.sum((self.arm == arm) & (self.period == period)))

    def cell_mean(self, arm: int, period: int) -> float:
        """Mean outcome in one arm-by-period cell; error if the cell is empty."""
        mask = (self.arm == arm) & (self.period == period)
        if not mask.any():
            raise ValueError(f"no patients in arm {arm}, period {period}")
        return float(self.y[mask].mean())

    def cell_mean_table(self) -> np.ndarray:
        """Arms-by-periods matrix of cell means, NaN where a cell is empty."""
        out = np.full((self.design.num_arms, self.design.num_periods), np.nan)
        for a in range(self.design.num_arms):
            for s in range(1, self.design.num_periods + 1):
                mask = (self.arm == a) & (self.period == s)
                if mask.any():
                    out[a, s - 1] = self.y[mask].mean()
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["j", "t", "arm", "period", "y"])
            for i in range(self.n):
                writer.writerow(
                    [
                        int(self.j[i]),
                        repr(float(self.t[i])),
                        int(self.arm[i]),
                        int(self.period[i]),
                        repr(float(self.y[i])),
                    ]
                )


def _check(violations, label: str) -> None:
    if violations:
        detail = "; ".join(f"{v.code}: {v.message}" for v in violations)
        raise ValueError(f"invalid {label}: {detail}")


def generate_trial(
    scenario: Scenario,
    design: TrialDesign,
    seed=None,
    validate: bool = True,
) -> TrialDataset:
    """Simulate one complete trial.

    ``seed`` may be anything ``numpy.random.default_rng`` accepts, or an
    existing generator (used in place, which is how the simulation loop
    shares one stream per replicate).  With ``entry_time_mode`` set to
    ``random_uniform`` the entry times are sorted uniforms on (0, N] and the
    trend is evaluated at those times instead of the enrollment index.
    """
    if validate:
        _check(validate_design(design), "design")
        _check(validate_scenario(scenario, design), "scenario")
    rng = as_generator(seed)
    assignment: AssignmentSequence = assignment_sequence(design, rng)
    n = design.total_size
    j = np.arange(1, n + 1, dtype=np.int64)
    if scenario.entry_time_mode == "random_uniform":
        t = np.sort(rng.uniform(0.0, float(n), size=n))
    else:
        t = j.astype(np.float64)
    period1 = int(design.period_sizes[0])
    trend = time_trend_value(
        scenario.trend_pattern,
        1.0,
        t,
        n,
        period1,
        peak_index=scenario.peak_index,
    )
    strengths = np.asarray(scenario.trend_strength, dtype=np.float64)
    arms = assignment.arms
    effects = np.array(
        [scenario.arm_effect(a) for a in range(design.num_arms)], dtype=np.float64
    )
    eta = scenario.control_response + effects[arms] + strengths[arms] * trend
    if scenario.endpoint == "continuous":
        y = eta + scenario.sigma * rng.standard_normal(n)
    else:
        y = (rng.random(n) < expit(eta)).astype(np.float64)
    return TrialDataset(
        design=design,
        scenario=scenario,
        j=j,
        t=t,
        arm=arms,
        period=assignment.periods,
        y=y,
    )
