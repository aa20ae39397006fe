"""Analysis models for a platform trial dataset.

Eight model kinds cover the comparison strategies for a late-entering arm:
regression on all arms with a step or linear time adjustment (``alltc_step``,
``alltc_linear``), the same plus treatment-by-time interaction terms for the
other treatment arms (``alltci_step``, ``alltci_linear``), the two-arm
restriction to the tested arm and controls (``tc_step``, ``tc_linear``), and
the unadjusted references: ``pooled`` (tested arm versus all controls) and
``separate`` (tested arm versus concurrent controls only).

The tested hypothesis is one-sided, effect <= 0 against effect > 0, with
larger outcomes meaning better ones.  Continuous endpoints use a t-test from
a linear model; binary endpoints use a Wald z-test from a logistic model.

The closed-form analytics for the model-based control estimate live here as
well: :func:`rho`, :func:`ncc_weights`, :func:`estimate_control_response`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr, stdtr

from . import kernels
from .datagen import TrialDataset

MODEL_KINDS = (
    "alltc_step",
    "alltci_step",
    "tc_step",
    "alltc_linear",
    "alltci_linear",
    "tc_linear",
    "pooled",
    "separate",
)

VARIANCE_MODES = ("homoscedastic", "per_period")

# Kinds whose design matrix carries a period factor; only these support the
# per-period residual variance mode.
_PERIOD_FACTOR_KINDS = frozenset({"alltc_step", "alltci_step", "tc_step"})


class SingularDesignError(ValueError):
    """Predictor matrix is rank deficient at the working tolerance."""


@dataclass(frozen=True)
class AnalysisModel:
    """One analysis strategy: a model kind plus a residual variance mode."""

    kind: str
    variance_mode: str = "homoscedastic"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"unknown variance_mode {self.variance_mode!r}")
        if self.variance_mode == "per_period" and self.kind not in _PERIOD_FACTOR_KINDS:
            raise ValueError(
                f"per_period variance needs a model with a period factor, not {self.kind!r}"
            )

    @property
    def label(self) -> str:
        if self.variance_mode == "homoscedastic":
            return self.kind
        return f"{self.kind}+{self.variance_mode}"


@dataclass(frozen=True)
class FitResult:
    """One fitted model: named coefficients and the one-sided test of the
    tested arm's effect.

    ``df`` is the t reference degrees of freedom for continuous fits and None
    for logistic fits (Wald normal).  ``diagnostics`` may contain
    ``separation_suspected``, ``singular_design``, or ``degenerate_variance``.
    """

    estimates: dict[str, float]
    standard_errors: dict[str, float]
    effect_name: str
    effect: float
    effect_se: float
    one_sided_p: float
    df: float | None
    converged: bool
    iterations: int
    diagnostics: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "estimates": dict(self.estimates),
            "standard_errors": dict(self.standard_errors),
            "effect_name": self.effect_name,
            "effect": self.effect,
            "effect_se": self.effect_se,
            "one_sided_p": self.one_sided_p,
            "df": self.df,
            "converged": self.converged,
            "iterations": self.iterations,
            "diagnostics": list(self.diagnostics),
        }


class DesignMatrix(NamedTuple):
    """Response, predictors, the dataset rows used, and column names."""

    y: np.ndarray
    X: np.ndarray
    rows: np.ndarray
    columns: tuple[str, ...]


def build_design_matrix(dataset: TrialDataset, model_kind: str, tested_arm: int = 2) -> DesignMatrix:
    """Assemble the regression problem for one model kind.

    Step models encode calendar time as one indicator per period after the
    first; linear models use the entry time directly (the enrollment index
    under deterministic entry).  Interaction models add, for every other
    treatment arm, its own period-2-onward indicators (or its own slope), so
    that arm's drift is decoupled from the shared time adjustment.
    """
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    design = dataset.design
    if not 1 <= tested_arm < design.num_arms:
        raise ValueError(f"tested_arm {tested_arm} out of range")

    if model_kind in ("alltc_step", "alltci_step", "alltc_linear", "alltci_linear"):
        mask = np.ones(dataset.n, dtype=bool)
    elif model_kind in ("tc_step", "tc_linear", "pooled"):
        mask = (dataset.arm == 0) | (dataset.arm == tested_arm)
    elif model_kind == "separate":
        lo, hi = design.active_window(tested_arm)
        mask = ((dataset.arm == 0) | (dataset.arm == tested_arm)) & (
            (dataset.period >= lo) & (dataset.period <= hi)
        )
    rows = np.flatnonzero(mask)
    arm = dataset.arm[rows]
    period = dataset.period[rows]
    t = dataset.t[rows]
    n = rows.size

    cols: list[np.ndarray] = [np.ones(n)]
    names: list[str] = ["intercept"]
    treatment_arms = [k for k in np.unique(arm) if k != 0]
    if tested_arm not in treatment_arms:
        raise ValueError(f"tested arm {tested_arm} has no rows under model {model_kind!r}")
    for k in treatment_arms:
        cols.append((arm == k).astype(np.float64))
        names.append(f"arm{k}")

    if model_kind in ("alltc_step", "alltci_step", "tc_step"):
        for s in range(2, design.num_periods + 1):
            if np.any(period == s):
                cols.append((period == s).astype(np.float64))
                names.append(f"period{s}")
    elif model_kind in ("alltc_linear", "alltci_linear", "tc_linear"):
        cols.append(t.astype(np.float64))
        names.append("time")

    if model_kind == "alltci_step":
        for k in treatment_arms:
            if k == tested_arm:
                continue
            first = int(period[arm == k].min())
            for s in range(max(2, first + 1), design.num_periods + 1):
                if np.any((arm == k) & (period == s)):
                    cols.append(((arm == k) & (period == s)).astype(np.float64))
                    names.append(f"arm{k}:period{s}")
    elif model_kind == "alltci_linear":
        for k in treatment_arms:
            if k == tested_arm:
                continue
            cols.append(np.where(arm == k, t, 0.0))
            names.append(f"arm{k}:time")

    X = np.column_stack(cols)
    return DesignMatrix(y=dataset.y[rows], X=X, rows=rows, columns=tuple(names))


def _named(values, columns):
    return {name: float(v) for name, v in zip(columns, values)}


def _default_columns(p: int, columns) -> tuple[str, ...]:
    if columns is None:
        return tuple(f"b{i}" for i in range(p))
    if len(columns) != p:
        raise ValueError(f"got {len(columns)} column names for {p} columns")
    return tuple(columns)


def _edge_p(effect: float) -> float:
    """One-sided p when the standard error collapses to zero."""
    if effect > 0:
        return 0.0
    if effect < 0:
        return 1.0
    return 0.5


def fit_linear(
    response,
    predictors,
    variance_mode: str = "homoscedastic",
    periods=None,
    effect_index: int = 1,
    column_names=None,
) -> FitResult:
    """Ordinary least squares with a one-sided t-test for one coefficient.

    ``homoscedastic`` uses the pooled residual variance with n - p degrees of
    freedom.  ``per_period`` estimates the residual variance separately per
    level of ``periods`` and tests the target coefficient with a
    Welch-Satterthwaite approximation, each period's degrees of freedom being
    its row count minus its share of the hat-matrix diagonal.
    """
    y = np.asarray(response, dtype=np.float64)
    X = np.asarray(predictors, dtype=np.float64)
    if X.ndim != 2 or y.shape[0] != X.shape[0]:
        raise ValueError("response and predictors have incompatible shapes")
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more rows than columns, got {n} rows for {p} columns")
    if variance_mode not in VARIANCE_MODES:
        raise ValueError(f"unknown variance_mode {variance_mode!r}")
    if not 0 <= effect_index < p:
        raise ValueError(f"effect_index {effect_index} out of range")
    columns = _default_columns(p, column_names)

    beta, r_inv, ok = kernels.ols_qr(X, y)
    if not ok:
        raise SingularDesignError("predictor matrix is rank deficient")
    resid = y - X @ beta
    cov_unscaled = r_inv @ r_inv.T
    effect = float(beta[effect_index])
    diagnostics: list[str] = []

    if variance_mode == "homoscedastic":
        df = float(n - p)
        s2 = float(resid @ resid) / df
        se = np.sqrt(s2 * np.diag(cov_unscaled))
        effect_se = float(se[effect_index])
        if s2 <= 0.0:
            diagnostics.append("degenerate_variance")
            p_val = _edge_p(effect)
        else:
            t_stat = effect / effect_se
            p_val = float(stdtr(df, -t_stat))
    else:
        if periods is None:
            raise ValueError("per_period variance needs the periods of the rows used")
        labels = np.asarray(periods)
        if labels.shape[0] != n:
            raise ValueError("periods must have one label per row")
        # Per-period residual variance, df = rows minus hat-diagonal mass;
        # the target contrast variance splits additively over periods.
        proj = X @ r_inv
        leverages = np.einsum("ij,ij->i", proj, proj)
        u = X @ cov_unscaled[:, effect_index]
        contrib = X @ cov_unscaled
        var_cols = np.zeros(p)
        var_effect = 0.0
        welch_den = 0.0
        degenerate = False
        for s in np.unique(labels):
            in_s = labels == s
            nu = float(in_s.sum() - leverages[in_s].sum())
            if nu <= 0.0:
                degenerate = True
                break
            s2_s = float(resid[in_s] @ resid[in_s]) / nu
            var_cols += s2_s * np.einsum("ij,ij->j", contrib[in_s], contrib[in_s])
            a_s = float(u[in_s] @ u[in_s]) * s2_s
            var_effect += a_s
            welch_den += a_s * a_s / nu
        if degenerate or var_effect <= 0.0:
            diagnostics.append("degenerate_variance")
            se = np.zeros(p)
            effect_se = 0.0
            df = None
            p_val = _edge_p(effect)
        else:
            se = np.sqrt(var_cols)
            effect_se = float(np.sqrt(var_effect))
            df = float(var_effect * var_effect / welch_den) if welch_den > 0.0 else float(n - p)
            t_stat = effect / effect_se
            p_val = float(stdtr(df, -t_stat))

    return FitResult(
        estimates=_named(beta, columns),
        standard_errors=_named(se, columns),
        effect_name=columns[effect_index],
        effect=effect,
        effect_se=effect_se,
        one_sided_p=min(max(p_val, 0.0), 1.0),
        df=df,
        converged=True,
        iterations=1,
        diagnostics=tuple(diagnostics),
    )


def fit_logistic(
    response,
    predictors,
    effect_index: int = 1,
    column_names=None,
    tol: float = 1e-8,
    max_iter: int = 25,
) -> FitResult:
    """Logistic regression with a one-sided Wald z-test for one coefficient.

    Fitting stops when the largest coefficient update falls below ``tol`` or
    after ``max_iter`` sweeps; a non-converged fit is returned with
    ``converged`` False, plus ``separation_suspected`` when any fitted
    probability sits at the numerical boundary.
    """
    y = np.asarray(response, dtype=np.float64)
    X = np.asarray(predictors, dtype=np.float64)
    if X.ndim != 2 or y.shape[0] != X.shape[0]:
        raise ValueError("response and predictors have incompatible shapes")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("logistic response must be 0/1")
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more rows than columns, got {n} rows for {p} columns")
    if not 0 <= effect_index < p:
        raise ValueError(f"effect_index {effect_index} out of range")
    columns = _default_columns(p, column_names)

    beta, cov, fitted, converged, n_iter, ok = kernels.logistic_irls(X, y, tol, max_iter)
    if not ok:
        raise SingularDesignError("predictor matrix is rank deficient in the weighted solve")
    diagnostics: list[str] = []
    if fitted.min() < kernels.PROB_CLIP or fitted.max() > 1.0 - kernels.PROB_CLIP:
        diagnostics.append("separation_suspected")
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    effect = float(beta[effect_index])
    effect_se = float(se[effect_index])
    if effect_se <= 0.0:
        p_val = _edge_p(effect)
        diagnostics.append("degenerate_variance")
    else:
        p_val = float(ndtr(-effect / effect_se))

    return FitResult(
        estimates=_named(beta, columns),
        standard_errors=_named(se, columns),
        effect_name=columns[effect_index],
        effect=effect,
        effect_se=effect_se,
        one_sided_p=min(max(p_val, 0.0), 1.0),
        df=None,
        converged=bool(converged),
        iterations=int(n_iter),
        diagnostics=tuple(diagnostics),
    )


def rho(n01: int, n02: int, n11: int, n12: int) -> float:
    """Share of the model-based control estimate carried by earlier-period data.

    Harmonic form in the four control/arm-1 cell counts; approaches 0 as the
    concurrent control count grows.
    """
    counts = (n01, n02, n11, n12)
    if any(c < 1 for c in counts):
        raise ValueError(f"all four cell counts must be >= 1, got {counts}")
    return (1.0 / n02) / (1.0 / n01 + 1.0 / n02 + 1.0 / n11 + 1.0 / n12)


@dataclass(frozen=True)
class WeightMatrix:
    """Cell-mean weights for the adjusted tested-arm effect estimate.

    Row k, column s holds the weight of the (arm k, period s) mean; the
    tested-arm row is (0, 1) and the weights sum to zero.
    """

    weights: np.ndarray
    rho: float

    def apply(self, cell_means: np.ndarray) -> float:
        """Weighted sum over cell means; entries with weight 0 are ignored,
        so empty cells may be NaN."""
        w = self.weights
        used = w != 0.0
        return float(np.sum(w[used] * np.asarray(cell_means)[used]))


def ncc_weights(n01: int, n02: int, n11: int, n12: int) -> WeightMatrix:
    """Weight matrix of the step-adjusted effect estimate for the two-period,
    three-arm layout, as a function of the four control/arm-1 cell counts."""
    r = rho(n01, n02, n11, n12)
    w = np.array(
        [
            [-r, r - 1.0],
            [r, -r],
            [0.0, 1.0],
        ]
    )
    w.setflags(write=False)
    return WeightMatrix(weights=w, rho=r)


def estimate_control_response(dataset: TrialDataset) -> float:
    """Model-based estimate of the second-period control response.

    Blends the concurrent control mean with the earlier-period control mean
    shifted by the other treatment arm's observed change, weighted by
    :func:`rho` at the realized cell counts.
    """
    n01 = dataset.cell_count(0, 1)
    n02 = dataset.cell_count(0, 2)
    n11 = dataset.cell_count(1, 1)
    n12 = dataset.cell_count(1, 2)
    if min(n01, n02, n11, n12) < 1:
        raise ValueError(
            f"need data in all four control/arm-1 cells, got counts {(n01, n02, n11, n12)}"
        )
    r = rho(n01, n02, n11, n12)
    y01 = dataset.cell_mean(0, 1)
    y02 = dataset.cell_mean(0, 2)
    y11 = dataset.cell_mean(1, 1)
    y12 = dataset.cell_mean(1, 2)
    return (1.0 - r) * y02 + r * (y01 + (y12 - y11))


def test_theta2(
    dataset: TrialDataset,
    model: AnalysisModel,
    alpha: float = 0.025,
    tested_arm: int = 2,
) -> tuple[bool, FitResult]:
    """One-sided test of the tested arm's effect at level ``alpha``.

    Returns ``(reject, fit)``.  A fit that did not converge or whose variance
    degenerated never rejects; rank-deficient designs raise
    :class:`SingularDesignError` for the caller to count.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    dm = build_design_matrix(dataset, model.kind, tested_arm)
    effect_index = dm.columns.index(f"arm{tested_arm}")
    if dataset.scenario.endpoint == "continuous":
        periods = dataset.period[dm.rows] if model.variance_mode == "per_period" else None
        fit = fit_linear(
            dm.y,
            dm.X,
            variance_mode=model.variance_mode,
            periods=periods,
            effect_index=effect_index,
            column_names=dm.columns,
        )
    else:
        if model.variance_mode != "homoscedastic":
            raise ValueError("per_period variance applies to continuous endpoints only")
        fit = fit_logistic(dm.y, dm.X, effect_index=effect_index, column_names=dm.columns)
    usable = fit.converged and "degenerate_variance" not in fit.diagnostics
    reject = bool(usable and fit.one_sided_p < alpha)
    return reject, fit
