"""Scenario grids, the replication engine, and result aggregation.

A grid is a list of fully specified scenarios (points) crossed with a list of
analysis models.  Each replicate draws one dataset from its own counter-based
stream keyed by (master seed, point index, replicate index) and applies every
model to that same dataset, so model comparisons share random numbers and the
output is independent of how replicates are scheduled across workers.
"""

from __future__ import annotations

import csv
import itertools
import json
import multiprocessing
from dataclasses import dataclass
from math import log, sqrt

import numpy as np
from scipy.special import logit

from . import __version__, kernels
from .design import (
    Scenario,
    TrialDesign,
    default_two_period_design,
    validate_design,
    validate_scenario,
)
from .inference import AnalysisModel, SingularDesignError, test_theta2
from .datagen import generate_trial
from .randomization import replicate_stream

CSV_COLUMNS = (
    "scenario_id",
    "endpoint",
    "pattern",
    "lambda0",
    "lambda1",
    "lambda2",
    "theta1",
    "theta2",
    "hypothesis",
    "model",
    "variance_mode",
    "n_reps",
    "reject_rate",
    "mc_se",
    "mean_est",
    "bias",
    "rmse",
    "n_failures",
)

AXIS_PARAMS = (
    "hypothesis",
    "pattern",
    "lambda0",
    "lambda1",
    "lambda2",
    "lambda_all",
    "peak_index",
    "arm1_period2_mean",
    "arm1_period2_rate",
)


class ConfigError(ValueError):
    """A scenario-grid configuration is malformed; the message names the field."""


@dataclass(frozen=True)
class GridPoint:
    """One fully specified scenario with its identifying labels."""

    point_id: str
    scenario: Scenario
    hypothesis: str


@dataclass(frozen=True)
class ScenarioGrid:
    """Everything one simulation run needs: points, models, size, and seed."""

    name: str
    design: TrialDesign
    points: tuple[GridPoint, ...]
    models: tuple[AnalysisModel, ...]
    replicates: int
    master_seed: int
    alpha: float = 0.025
    tested_arm: int = 2


@dataclass(frozen=True)
class SummaryStats:
    """Aggregates over one (point, model) cell of the grid."""

    n_reps: int
    reject_rate: float
    mc_se: float
    mean_est: float
    bias: float
    rmse: float
    n_failures: int


@dataclass(frozen=True)
class ScenarioSummary:
    """One output row: scenario labels plus the aggregated results."""

    scenario_id: str
    endpoint: str
    pattern: str
    lambda0: float
    lambda1: float
    lambda2: float
    theta1: float
    theta2: float
    hypothesis: str
    model: str
    variance_mode: str
    n_reps: int
    reject_rate: float
    mc_se: float
    mean_est: float
    bias: float
    rmse: float
    n_failures: int

    def as_row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def summarize(estimates, rejections, theta2_true: float) -> SummaryStats:
    """Aggregate per-replicate effect estimates and rejection flags.

    A NaN estimate marks a failed fit: it is excluded from the moment
    summaries and counted in ``n_failures`` (its rejection flag is False by
    construction).
    """
    est = np.asarray(estimates, dtype=np.float64)
    rej = np.asarray(rejections, dtype=bool)
    if est.size == 0 or est.shape != rej.shape:
        raise ValueError("need matching nonempty estimate and rejection arrays")
    n = est.size
    valid = np.isfinite(est)
    n_fail = int(n - valid.sum())
    rate = float(rej.mean())
    mc_se = sqrt(rate * (1.0 - rate) / n)
    if valid.any():
        good = est[valid]
        mean_est = float(good.mean())
        bias = mean_est - theta2_true
        rmse = float(np.sqrt(np.mean((good - theta2_true) ** 2)))
    else:
        mean_est = float("nan")
        bias = float("nan")
        rmse = float("nan")
    return SummaryStats(
        n_reps=n,
        reject_rate=rate,
        mc_se=mc_se,
        mean_est=mean_est,
        bias=bias,
        rmse=rmse,
        n_failures=n_fail,
    )


def _run_chunk(grid: ScenarioGrid, point_index: int, lo: int, hi: int):
    """Replicates [lo, hi) of one grid point; returns position-tagged arrays."""
    point = grid.points[point_index]
    n_models = len(grid.models)
    est = np.full((n_models, hi - lo), np.nan)
    rej = np.zeros((n_models, hi - lo), dtype=bool)
    for r in range(lo, hi):
        rng = replicate_stream(grid.master_seed, point_index, r)
        dataset = generate_trial(point.scenario, grid.design, rng, validate=False)
        for m, model in enumerate(grid.models):
            try:
                reject, fit = test_theta2(dataset, model, grid.alpha, grid.tested_arm)
            except SingularDesignError:
                continue
            rej[m, r - lo] = reject
            if fit.converged:
                est[m, r - lo] = fit.effect
    return lo, est, rej


def _chunk_bounds(total: int, pieces: int) -> list[tuple[int, int]]:
    size = max(1, -(-total // pieces))
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def _check_grid(grid: ScenarioGrid) -> None:
    if grid.replicates < 1:
        raise ValueError(f"replicates must be >= 1, got {grid.replicates}")
    if not grid.points:
        raise ValueError("grid has no points")
    if not grid.models:
        raise ValueError("grid has no analysis models")
    problems = validate_design(grid.design)
    if problems:
        raise ValueError("invalid design: " + "; ".join(map(str, problems)))
    for point in grid.points:
        problems = validate_scenario(point.scenario, grid.design)
        if problems:
            raise ValueError(f"invalid scenario {point.point_id!r}: " + "; ".join(map(str, problems)))


def run_grid(grid: ScenarioGrid, workers: int = 1) -> list[ScenarioSummary]:
    """Run every grid point and return one summary per (point, model).

    Replicate streams are keyed by position, and per-replicate results land in
    preallocated slots before any aggregation, so the output is identical for
    any worker count.
    """
    _check_grid(grid)
    n_models = len(grid.models)
    reps = grid.replicates
    summaries: list[ScenarioSummary] = []
    pool = None
    try:
        if workers > 1:
            pool = multiprocessing.get_context().Pool(processes=workers)
        for p_idx, point in enumerate(grid.points):
            est = np.full((n_models, reps), np.nan)
            rej = np.zeros((n_models, reps), dtype=bool)
            if pool is None:
                chunks = [_run_chunk(grid, p_idx, 0, reps)]
            else:
                bounds = _chunk_bounds(reps, workers * 4)
                chunks = pool.starmap(_run_chunk, [(grid, p_idx, lo, hi) for lo, hi in bounds])
            for lo, e, r in chunks:
                width = e.shape[1]
                est[:, lo : lo + width] = e
                rej[:, lo : lo + width] = r
            scenario = point.scenario
            effect_true = scenario.arm_effect(grid.tested_arm)
            for m_idx, model in enumerate(grid.models):
                stats = summarize(est[m_idx], rej[m_idx], effect_true)
                summaries.append(
                    ScenarioSummary(
                        scenario_id=point.point_id,
                        endpoint=scenario.endpoint,
                        pattern=scenario.trend_pattern,
                        lambda0=_strength(scenario, 0),
                        lambda1=_strength(scenario, 1),
                        lambda2=_strength(scenario, 2),
                        theta1=_effect(scenario, 1),
                        theta2=_effect(scenario, 2),
                        hypothesis=point.hypothesis,
                        model=model.kind,
                        variance_mode=model.variance_mode,
                        n_reps=stats.n_reps,
                        reject_rate=stats.reject_rate,
                        mc_se=stats.mc_se,
                        mean_est=stats.mean_est,
                        bias=stats.bias,
                        rmse=stats.rmse,
                        n_failures=stats.n_failures,
                    )
                )
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return summaries


def _strength(scenario: Scenario, arm: int) -> float:
    return float(scenario.trend_strength[arm]) if arm < len(scenario.trend_strength) else float("nan")


def _effect(scenario: Scenario, arm: int) -> float:
    return float(scenario.effects[arm - 1]) if 1 <= arm <= len(scenario.effects) else float("nan")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(summaries, path) -> None:
    """Write summaries with the fixed column set, full float precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for s in summaries:
            writer.writerow([_cell(v) for v in s.as_row()])


def summaries_to_dicts(summaries) -> list[dict]:
    return [dict(zip(CSV_COLUMNS, s.as_row())) for s in summaries]


def write_json(summaries, path) -> None:
    with open(path, "w") as fh:
        json.dump(summaries_to_dicts(summaries), fh, indent=2)
        fh.write("\n")


def provenance_record(config_doc: dict, output_name: str) -> dict:
    """Sidecar payload: the resolved configuration plus run identity.

    Re-running the embedded configuration reproduces the output file
    byte for byte.
    """
    return {
        "config": config_doc,
        "master_seed": config_doc.get("master_seed"),
        "output": output_name,
        "columns": list(CSV_COLUMNS),
        "package": f"ncc-sim {__version__}",
        "backend": kernels.BACKEND,
    }


def write_provenance(config_doc: dict, output_name: str, path) -> None:
    with open(path, "w") as fh:
        json.dump(provenance_record(config_doc, output_name), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(doc: dict, field: str, kind, context: str):
    if field not in doc:
        raise ConfigError(f"{context}: missing required field {field!r}")
    value = doc[field]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{context}: field {field!r} must be a number, got {value!r}")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{context}: field {field!r} must be an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"{context}: field {field!r} has the wrong type, got {value!r}")
    return value


def _reject_unknown(doc: dict, allowed, context: str) -> None:
    extra = sorted(set(doc) - set(allowed))
    if extra:
        raise ConfigError(f"{context}: unknown field(s) {', '.join(map(repr, extra))}")


def _design_from_doc(doc) -> TrialDesign:
    if doc is None:
        return default_two_period_design()
    _reject_unknown(doc, ("cell_sizes", "block_sizes", "randomization"), "design")
    cell_sizes = _require(doc, "cell_sizes", list, "design")
    block_sizes = _require(doc, "block_sizes", list, "design")
    design = TrialDesign.create(
        cell_sizes=cell_sizes,
        block_sizes=block_sizes,
        randomization_kind=doc.get("randomization", "permuted_block"),
    )
    problems = validate_design(design)
    if problems:
        raise ConfigError("design: " + "; ".join(map(str, problems)))
    return design


_SCENARIO_FIELDS = (
    "control_mean",
    "sigma",
    "effects",
    "control_rate",
    "odds_ratios",
    "pattern",
    "trend_strength",
    "peak_index",
    "entry_time_mode",
)


def _scenario_from_doc(endpoint: str, sdoc: dict, design: TrialDesign) -> Scenario:
    _reject_unknown(sdoc, _SCENARIO_FIELDS, "scenario")
    pattern = _require(sdoc, "pattern", str, "scenario")
    strength = tuple(float(x) for x in _require(sdoc, "trend_strength", list, "scenario"))
    peak = sdoc.get("peak_index")
    if peak is not None:
        peak = int(peak)
    entry = sdoc.get("entry_time_mode", "deterministic")
    if endpoint == "continuous":
        for banned in ("control_rate", "odds_ratios"):
            if banned in sdoc:
                raise ConfigError(f"scenario: field {banned!r} is for binary endpoints")
        scenario = Scenario(
            endpoint="continuous",
            control_response=float(sdoc.get("control_mean", 0.0)),
            effects=tuple(float(x) for x in _require(sdoc, "effects", list, "scenario")),
            trend_pattern=pattern,
            trend_strength=strength,
            sigma=float(sdoc.get("sigma", 1.0)),
            peak_index=peak,
            entry_time_mode=entry,
        )
    else:
        for banned in ("control_mean", "sigma", "effects"):
            if banned in sdoc:
                raise ConfigError(f"scenario: field {banned!r} is for continuous endpoints")
        scenario = Scenario.from_binary_rates(
            control_rate=_require(sdoc, "control_rate", float, "scenario"),
            odds_ratios=_require(sdoc, "odds_ratios", list, "scenario"),
            trend_pattern=pattern,
            trend_strength=strength,
            peak_index=peak,
            entry_time_mode=entry,
        )
    problems = validate_scenario(scenario, design)
    if problems:
        raise ConfigError("scenario: " + "; ".join(map(str, problems)))
    return scenario


def _fmt_value(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def _apply_axis(sdoc: dict, param: str, value, endpoint: str) -> None:
    """Fold one axis setting into the scenario document (pre-construction)."""
    if param == "pattern":
        sdoc["pattern"] = value
    elif param in ("lambda0", "lambda1", "lambda2"):
        arm = int(param[-1])
        strength = list(sdoc["trend_strength"])
        if arm >= len(strength):
            raise ConfigError(f"axis {param!r}: trend_strength has no arm {arm}")
        strength[arm] = float(value)
        sdoc["trend_strength"] = strength
    elif param == "lambda_all":
        sdoc["trend_strength"] = [float(value)] * len(sdoc["trend_strength"])
    elif param == "peak_index":
        sdoc["peak_index"] = int(value)
    elif param == "arm1_period2_mean":
        if endpoint != "continuous":
            raise ConfigError("axis 'arm1_period2_mean' applies to continuous endpoints")
        if sdoc.get("pattern") != "step":
            raise ConfigError("axis 'arm1_period2_mean' needs the step trend pattern")
        if "effects" not in sdoc:
            raise ConfigError("axis 'arm1_period2_mean' needs scenario field 'effects'")
        theta1 = float(sdoc["effects"][0])
        lam1 = float(value) - (float(sdoc.get("control_mean", 0.0)) + theta1)
        strength = list(sdoc["trend_strength"])
        strength[1] = lam1
        sdoc["trend_strength"] = strength
    elif param == "arm1_period2_rate":
        if endpoint != "binary":
            raise ConfigError("axis 'arm1_period2_rate' applies to binary endpoints")
        if sdoc.get("pattern") != "step":
            raise ConfigError("axis 'arm1_period2_rate' needs the step trend pattern")
        rate = float(value)
        if not 0.0 < rate < 1.0:
            raise ConfigError(f"axis 'arm1_period2_rate': value {rate} not in (0, 1)")
        if "control_rate" not in sdoc or "odds_ratios" not in sdoc:
            raise ConfigError("axis 'arm1_period2_rate' needs 'control_rate' and 'odds_ratios'")
        base = logit(float(sdoc["control_rate"])) + log(float(sdoc["odds_ratios"][0]))
        strength = list(sdoc["trend_strength"])
        strength[1] = float(logit(rate)) - base
        sdoc["trend_strength"] = strength
    else:
        raise ConfigError(f"unknown axis parameter {param!r}")


_TOP_FIELDS = (
    "name",
    "endpoint",
    "replicates",
    "master_seed",
    "alpha",
    "tested_arm",
    "design",
    "models",
    "scenario",
    "sweeps",
)


def grid_from_config(doc: dict) -> ScenarioGrid:
    """Build a grid from a configuration document (parsed JSON).

    Sweep blocks cross their axes in listed order; every combination becomes
    one grid point whose id strings together the axis settings.  The
    ``hypothesis`` axis switches the tested arm's effect between the
    configured value (H1) and zero (H0).
    """
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be a JSON object")
    _reject_unknown(doc, _TOP_FIELDS, "config")
    endpoint = _require(doc, "endpoint", str, "config")
    if endpoint not in ("continuous", "binary"):
        raise ConfigError(f"config: endpoint must be continuous or binary, got {endpoint!r}")
    replicates = _require(doc, "replicates", int, "config")
    if replicates < 1:
        raise ConfigError(f"config: replicates must be >= 1, got {replicates}")
    master_seed = _require(doc, "master_seed", int, "config")
    alpha = float(doc.get("alpha", 0.025))
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"config: alpha must be in (0, 1), got {alpha}")
    tested_arm = doc.get("tested_arm", 2)
    design = _design_from_doc(doc.get("design"))
    if not isinstance(tested_arm, int) or not 1 <= tested_arm < design.num_arms:
        raise ConfigError(f"config: tested_arm {tested_arm!r} not a treatment arm of the design")

    models_doc = _require(doc, "models", list, "config")
    if not models_doc:
        raise ConfigError("config: models list is empty")
    models = []
    for i, mdoc in enumerate(models_doc):
        if not isinstance(mdoc, dict):
            raise ConfigError(f"models[{i}]: must be an object with a 'kind'")
        _reject_unknown(mdoc, ("kind", "variance_mode"), f"models[{i}]")
        kind = _require(mdoc, "kind", str, f"models[{i}]")
        mode = mdoc.get("variance_mode", "homoscedastic")
        try:
            model = AnalysisModel(kind=kind, variance_mode=mode)
        except ValueError as err:
            raise ConfigError(f"models[{i}]: {err}") from None
        if endpoint == "binary" and model.variance_mode != "homoscedastic":
            raise ConfigError(f"models[{i}]: per_period variance applies to continuous endpoints only")
        models.append(model)

    base_sdoc = _require(doc, "scenario", dict, "config")
    sweeps = doc.get("sweeps")
    if sweeps is None:
        sweeps = [{"label": "", "axes": []}]
    if not isinstance(sweeps, list) or not sweeps:
        raise ConfigError("config: sweeps must be a nonempty list when present")

    points: list[GridPoint] = []
    for i, sweep in enumerate(sweeps):
        if not isinstance(sweep, dict):
            raise ConfigError(f"sweeps[{i}]: must be an object")
        _reject_unknown(sweep, ("label", "overrides", "axes"), f"sweeps[{i}]")
        label = sweep.get("label", "")
        overrides = sweep.get("overrides", {})
        if not isinstance(overrides, dict):
            raise ConfigError(f"sweeps[{i}]: overrides must be an object")
        axes = sweep.get("axes", [])
        if not isinstance(axes, list):
            raise ConfigError(f"sweeps[{i}]: axes must be a list")
        params = []
        value_lists = []
        for a, axis in enumerate(axes):
            if not isinstance(axis, dict):
                raise ConfigError(f"sweeps[{i}].axes[{a}]: must be an object")
            _reject_unknown(axis, ("param", "values"), f"sweeps[{i}].axes[{a}]")
            param = _require(axis, "param", str, f"sweeps[{i}].axes[{a}]")
            if param != "hypothesis" and param not in AXIS_PARAMS:
                raise ConfigError(f"sweeps[{i}].axes[{a}]: unknown axis parameter {param!r}")
            values = _require(axis, "values", list, f"sweeps[{i}].axes[{a}]")
            if not values:
                raise ConfigError(f"sweeps[{i}].axes[{a}]: values list is empty")
            if param == "hypothesis" and any(v not in ("H0", "H1") for v in values):
                raise ConfigError(f"sweeps[{i}].axes[{a}]: hypothesis values must be H0 or H1")
            params.append(param)
            value_lists.append(values)
        for combo in itertools.product(*value_lists):
            sdoc = dict(base_sdoc)
            sdoc.update(overrides)
            hypothesis = None
            for param, value in zip(params, combo):
                if param == "hypothesis":
                    hypothesis = value
                else:
                    _apply_axis(sdoc, param, value, endpoint)
            scenario = _scenario_from_doc(endpoint, sdoc, design)
            if hypothesis is None:
                hypothesis = "H0" if scenario.arm_effect(tested_arm) == 0.0 else "H1"
            if hypothesis == "H0":
                effects = list(scenario.effects)
                effects[tested_arm - 1] = 0.0
                scenario = scenario.with_changes(effects=tuple(effects))
            parts = [label] if label else []
            parts.extend(f"{p}={_fmt_value(v)}" for p, v in zip(params, combo))
            point_id = ",".join(parts) if parts else "base"
            points.append(GridPoint(point_id=point_id, scenario=scenario, hypothesis=hypothesis))

    return ScenarioGrid(
        name=str(doc.get("name", "grid")),
        design=design,
        points=tuple(points),
        models=tuple(models),
        replicates=replicates,
        master_seed=master_seed,
        alpha=alpha,
        tested_arm=tested_arm,
    )
