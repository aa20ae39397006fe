"""Trial structure and scenario parameterization.

A platform trial is laid out on a grid of arms (control = arm 0, experimental
treatments 1..K) by calendar periods (1..S).  A period is a maximal time span
during which the set of active arms does not change; arms may enter late or
leave early, so some (arm, period) cells are empty by design.  Everything
downstream (randomization, data generation, inference) reads the trial layout
from :class:`TrialDesign` and the data-generating truth from
:class:`Scenario`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from math import log

import numpy as np
from scipy.special import expit, logit

TREND_PATTERNS = ("linear", "step", "inverse_u")
ENDPOINTS = ("continuous", "binary")
ENTRY_TIME_MODES = ("deterministic", "random_uniform")
RANDOMIZATION_KINDS = ("permuted_block", "simple")


@dataclass(frozen=True)
class Violation:
    """One broken design/scenario invariant, with a machine-readable code."""

    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


@dataclass(frozen=True)
class TrialDesign:
    """Arms-by-periods layout of a platform trial.

    ``cell_sizes[k][s-1]`` is the planned number of patients on arm ``k`` in
    period ``s``; a zero cell means the arm is not active in that period.
    ``entry_period`` and ``exit_period`` give each arm's active window and must
    agree with the zero pattern of ``cell_sizes`` (checked by
    :func:`validate_design`).  ``block_sizes`` holds one block length per
    period for permuted-block randomization.
    """

    cell_sizes: tuple[tuple[int, ...], ...]
    block_sizes: tuple[int, ...]
    entry_period: tuple[int, ...]
    exit_period: tuple[int, ...]
    randomization_kind: str = "permuted_block"

    @classmethod
    def create(
        cls,
        cell_sizes,
        block_sizes,
        entry_period=None,
        exit_period=None,
        randomization_kind: str = "permuted_block",
    ) -> "TrialDesign":
        """Build a design, deriving entry/exit windows from nonzero cells."""
        cells = tuple(tuple(int(n) for n in row) for row in cell_sizes)
        if entry_period is None:
            entry_period = tuple(
                min((s + 1 for s, n in enumerate(row) if n > 0), default=1)
                for row in cells
            )
        if exit_period is None:
            exit_period = tuple(
                max((s + 1 for s, n in enumerate(row) if n > 0), default=0)
                for row in cells
            )
        return cls(
            cell_sizes=cells,
            block_sizes=tuple(int(b) for b in block_sizes),
            entry_period=tuple(int(s) for s in entry_period),
            exit_period=tuple(int(s) for s in exit_period),
            randomization_kind=randomization_kind,
        )

    @property
    def num_arms(self) -> int:
        return len(self.cell_sizes)

    @property
    def num_periods(self) -> int:
        return len(self.cell_sizes[0]) if self.cell_sizes else 0

    @cached_property
    def cells(self) -> np.ndarray:
        """Cell sizes as an (arms x periods) integer array."""
        a = np.asarray(self.cell_sizes, dtype=np.int64)
        a.setflags(write=False)
        return a

    @cached_property
    def period_sizes(self) -> np.ndarray:
        """Patients per period, summed over arms."""
        a = self.cells.sum(axis=0)
        a.setflags(write=False)
        return a

    @property
    def total_size(self) -> int:
        return int(self.period_sizes.sum())

    @cached_property
    def period_starts(self) -> np.ndarray:
        """1-based patient index at which each period begins."""
        a = np.concatenate(([1], 1 + np.cumsum(self.period_sizes[:-1])))
        a.setflags(write=False)
        return a

    def period_of(self, j) -> np.ndarray:
        """Period number (1-based) for patient index ``j`` (scalar or array)."""
        bounds = np.cumsum(self.period_sizes)
        return np.searchsorted(bounds, np.asarray(j), side="left") + 1

    def arms_in_period(self, period: int) -> list[int]:
        return [k for k in range(self.num_arms) if self.cell_sizes[k][period - 1] > 0]

    def active_window(self, arm: int) -> tuple[int, int]:
        return self.entry_period[arm], self.exit_period[arm]


def default_two_period_design(
    n_per_cell: int = 125,
    n_new_arm: int = 250,
    block_sizes=(4, 12),
    randomization_kind: str = "permuted_block",
) -> TrialDesign:
    """Two-period, three-arm layout: control and arm 1 run in both periods,
    arm 2 joins in period 2 with twice the per-period cell size."""
    return TrialDesign.create(
        cell_sizes=[
            [n_per_cell, n_per_cell],
            [n_per_cell, n_per_cell],
            [0, n_new_arm],
        ],
        block_sizes=block_sizes,
        randomization_kind=randomization_kind,
    )


def _block_quotas(design: TrialDesign, period: int):
    """Per-block arm counts for one period, or None if not integral.

    The block is split proportionally to the period's cell sizes, e.g. a
    block of 12 with cells 125/125/250 gives quotas 3/3/6.
    """
    sizes = design.cells[:, period - 1]
    total = int(sizes.sum())
    block = design.block_sizes[period - 1]
    if total <= 0 or block <= 0:
        return None
    quotas = sizes * block
    if np.any(quotas % total != 0):
        return None
    return (quotas // total).astype(np.int64)


def validate_design(design: TrialDesign) -> list[Violation]:
    """Check every structural invariant; an empty list means the design is valid.

    Violations are data rather than exceptions so that configuration loaders
    can report all problems at once.
    """
    out: list[Violation] = []
    arms, periods = design.num_arms, design.num_periods

    if arms < 1:
        out.append(Violation("no_arms", "design has no arms"))
        return out
    if periods < 2:
        out.append(Violation("too_few_periods", f"need at least 2 periods, got {periods}"))
    if any(len(row) != periods for row in design.cell_sizes):
        out.append(Violation("ragged_cells", "cell_sizes rows have unequal lengths"))
        return out
    if len(design.block_sizes) != periods:
        out.append(
            Violation("block_count_mismatch", f"expected {periods} block sizes, got {len(design.block_sizes)}")
        )
    if len(design.entry_period) != arms or len(design.exit_period) != arms:
        out.append(Violation("window_count_mismatch", "entry/exit periods must have one entry per arm"))
        return out
    if design.randomization_kind not in RANDOMIZATION_KINDS:
        out.append(
            Violation("unknown_randomization", f"randomization_kind {design.randomization_kind!r} not recognized")
        )

    for k in range(arms):
        lo, hi = design.entry_period[k], design.exit_period[k]
        if not (1 <= lo <= hi <= periods):
            out.append(Violation("bad_active_window", f"arm {k} window [{lo}, {hi}] out of range"))
            continue
        for s in range(1, periods + 1):
            n = design.cell_sizes[k][s - 1]
            if n < 0:
                out.append(Violation("negative_cell", f"arm {k}, period {s}: size {n} < 0"))
            elif n > 0 and s < lo:
                out.append(Violation("arm_present_before_entry", f"arm {k} has patients in period {s} but enters in {lo}"))
            elif n > 0 and s > hi:
                out.append(Violation("arm_present_after_exit", f"arm {k} has patients in period {s} but exits in {hi}"))
            elif n == 0 and lo <= s <= hi:
                out.append(Violation("zero_cell_while_present", f"arm {k} is active in period {s} but has cell size 0"))

    for s in range(1, periods + 1):
        if int(design.cells[:, s - 1].sum()) == 0:
            out.append(Violation("empty_period", f"period {s} has no patients"))
        if s <= len(design.block_sizes):
            b = design.block_sizes[s - 1]
            if b <= 0:
                out.append(Violation("nonpositive_block", f"period {s}: block size {b} must be positive"))
            elif design.randomization_kind == "permuted_block" and int(design.cells[:, s - 1].sum()) > 0:
                if _block_quotas(design, s) is None:
                    out.append(
                        Violation(
                            "block_quota_not_integer",
                            f"period {s}: block size {b} is not divisible into the allocation ratio",
                        )
                    )
    return out


@dataclass(frozen=True)
class Scenario:
    """Data-generating truth for one simulated trial.

    All location parameters live on the model scale: raw means for continuous
    endpoints, log-odds for binary ones.  ``effects[k-1]`` is the effect of
    treatment arm k versus control and ``trend_strength[k]`` scales the drift
    in arm k, so unequal-trend settings are just unequal entries.  Binary
    configurations given as response probabilities and odds ratios should be
    converted once via :meth:`from_binary_rates`.
    """

    endpoint: str
    control_response: float
    effects: tuple[float, ...]
    trend_pattern: str
    trend_strength: tuple[float, ...]
    sigma: float = 1.0
    peak_index: int | None = None
    entry_time_mode: str = "deterministic"

    @classmethod
    def from_binary_rates(
        cls,
        control_rate: float,
        odds_ratios,
        trend_pattern: str,
        trend_strength,
        peak_index: int | None = None,
        entry_time_mode: str = "deterministic",
    ) -> "Scenario":
        """Binary scenario from a control response probability and odds ratios."""
        if not 0.0 < control_rate < 1.0:
            raise ValueError(f"control_rate must be in (0, 1), got {control_rate}")
        ors = tuple(float(r) for r in odds_ratios)
        if any(r <= 0.0 for r in ors):
            raise ValueError(f"odds ratios must be positive, got {ors}")
        return cls(
            endpoint="binary",
            control_response=float(logit(control_rate)),
            effects=tuple(log(r) for r in ors),
            trend_pattern=trend_pattern,
            trend_strength=tuple(float(x) for x in trend_strength),
            peak_index=peak_index,
            entry_time_mode=entry_time_mode,
        )

    def arm_effect(self, arm: int) -> float:
        return 0.0 if arm == 0 else self.effects[arm - 1]

    def with_changes(self, **kw) -> "Scenario":
        return replace(self, **kw)


def validate_scenario(scenario: Scenario, design: TrialDesign) -> list[Violation]:
    """Check a scenario against its design; empty list means valid."""
    out: list[Violation] = []
    if scenario.endpoint not in ENDPOINTS:
        out.append(Violation("unknown_endpoint", f"endpoint {scenario.endpoint!r} not recognized"))
    if scenario.trend_pattern not in TREND_PATTERNS:
        out.append(Violation("unknown_trend_pattern", f"trend_pattern {scenario.trend_pattern!r} not recognized"))
    if scenario.entry_time_mode not in ENTRY_TIME_MODES:
        out.append(Violation("unknown_entry_time_mode", f"entry_time_mode {scenario.entry_time_mode!r} not recognized"))
    if len(scenario.effects) != design.num_arms - 1:
        out.append(
            Violation(
                "effects_length",
                f"expected {design.num_arms - 1} treatment effects, got {len(scenario.effects)}",
            )
        )
    if len(scenario.trend_strength) != design.num_arms:
        out.append(
            Violation(
                "trend_strength_length",
                f"expected {design.num_arms} trend strengths (one per arm), got {len(scenario.trend_strength)}",
            )
        )
    if scenario.endpoint == "continuous" and not scenario.sigma > 0:
        out.append(Violation("nonpositive_sigma", f"sigma must be > 0, got {scenario.sigma}"))
    if scenario.trend_pattern == "inverse_u":
        if scenario.peak_index is None:
            out.append(Violation("missing_peak_index", "inverse_u trend needs a peak_index"))
        elif not 1 <= scenario.peak_index <= design.total_size:
            out.append(
                Violation("peak_index_out_of_range", f"peak_index {scenario.peak_index} not in [1, {design.total_size}]")
            )
    return out


def time_trend_value(pattern: str, strength: float, j, total: int, period1_size: int, peak_index: int | None = None):
    """Model-scale drift at patient index ``j`` (scalar or array).

    linear ramps from 0 to ``strength`` over the whole trial, step jumps by
    ``strength`` after the first period, and inverse_u applies the linear ramp
    with its sign flipped for indices past ``peak_index``.
    """
    if total <= 1:
        raise ValueError(f"need at least 2 patients for a trend, got {total}")
    j = np.asarray(j, dtype=np.float64)
    if pattern == "linear":
        return strength * (j - 1.0) / (total - 1.0)
    if pattern == "step":
        return strength * (j > period1_size)
    if pattern == "inverse_u":
        if peak_index is None:
            raise ValueError("inverse_u trend needs a peak_index")
        sign = np.where(j <= peak_index, 1.0, -1.0)
        return strength * (j - 1.0) / (total - 1.0) * sign
    raise ValueError(f"unknown trend pattern {pattern!r}")


def model_scale_mean(scenario: Scenario, design: TrialDesign, arm: int, j):
    """Linear-predictor value for arm ``arm`` at patient index ``j``."""
    if not 0 <= arm < design.num_arms:
        raise ValueError(f"arm {arm} out of range for a {design.num_arms}-arm design")
    n1 = int(design.period_sizes[0])
    trend = time_trend_value(
        scenario.trend_pattern,
        scenario.trend_strength[arm],
        j,
        design.total_size,
        n1,
        scenario.peak_index,
    )
    return scenario.control_response + scenario.arm_effect(arm) + trend


def true_mean(scenario: Scenario, design: TrialDesign, arm: int, j):
    """Expected response on the natural scale (probability for binary data)."""
    j_arr = np.asarray(j)
    if np.any(j_arr < 1) or np.any(j_arr > design.total_size):
        raise ValueError(f"patient index out of range [1, {design.total_size}]")
    eta = model_scale_mean(scenario, design, arm, j)
    if scenario.endpoint == "binary":
        return expit(eta)
    return eta
