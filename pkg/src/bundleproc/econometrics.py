"""Two-period treatment-effect estimation on contract panels.

Implements the pooled OLS regression of outcome on group, period, their
interaction and optional controls, plus sensitivity bounds that scale the
control-group trend by a violation factor g (g = 1 recovers the baseline
interaction estimate).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import statsmodels.api as sm

from .errors import DomainError, NumericError
from .panel_data import ContractPanel, ContractRecord

Z_95 = 1.96

FIXED_EFFECT_COLUMNS = {
    "school_type": lambda r: r.school_type,
    "isp": lambda r: r.isp,
    "region": lambda r: r.region,
    "service_type": lambda r: r.transport,
}

SAMPLE_FILTERS = {
    "all": lambda r: True,
    "category_A": lambda r: r.category == "A",
    "category_D": lambda r: r.category == "D",
}


@dataclass(frozen=True)
class DiDSpec:
    """Regression specification: outcome, controls, and sample filter."""

    outcome: str = "price"
    include_n_isps: bool = False
    fixed_effects: tuple[str, ...] = ()
    sample_filter: str = "all"
    custom_filter: Callable[[ContractRecord], bool] | None = None

    def __post_init__(self) -> None:
        if self.outcome not in ("price", "bandwidth"):
            raise DomainError(f"unknown outcome {self.outcome!r}")
        unknown = set(self.fixed_effects) - set(FIXED_EFFECT_COLUMNS)
        if unknown:
            raise DomainError(f"unknown fixed effects {sorted(unknown)}")
        if self.sample_filter == "custom":
            if self.custom_filter is None:
                raise DomainError("custom sample filter requires custom_filter")
        elif self.sample_filter not in SAMPLE_FILTERS:
            raise DomainError(f"unknown sample filter {self.sample_filter!r}")

    def record_filter(self) -> Callable[[ContractRecord], bool]:
        if self.sample_filter == "custom":
            return self.custom_filter
        return SAMPLE_FILTERS[self.sample_filter]


@dataclass(frozen=True)
class DesignMatrix:
    """Assembled regressors with column names and a prune report."""

    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    pruned: tuple[str, ...]


def _reference_level(values: Sequence[str]) -> str:
    counts: dict[str, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    return sorted(v for v, c in counts.items() if c == best)[0]


def design_matrix(
    panel: ContractPanel,
    spec: DiDSpec,
    *,
    suppress_constant: bool = False,
) -> DesignMatrix:
    """Build the regressor matrix for the two-period group comparison.

    Columns: constant, participant, post-period indicator, and their
    interaction, then optional ISP-count control and dummy blocks per fixed
    effect (reference level dropped: most frequent, ties broken by label).
    With ``suppress_constant`` the constant and participant columns are
    replaced by the two group indicators (group-level parameterization).
    Collinear columns are pruned deterministically, left to right.
    """
    records = [r for r in panel.records if spec.record_filter()(r)]
    if not records:
        raise DomainError("empty sample after filtering")

    y = np.array(
        [r.price if spec.outcome == "price" else r.bandwidth for r in records]
    )
    participant = np.array([1.0 if r.participant else 0.0 for r in records])
    post = np.array([1.0 if r.year == 2015 else 0.0 for r in records])

    names: list[str] = []
    cols: list[np.ndarray] = []
    if suppress_constant:
        names += ["nonparticipant", "participant"]
        cols += [1.0 - participant, participant]
    else:
        names += ["const", "participant"]
        cols += [np.ones(len(records)), participant]
    names += ["post", "participant_x_post"]
    cols += [post, participant * post]

    if spec.include_n_isps:
        names.append("n_isps")
        cols.append(np.array([float(r.n_isps) for r in records]))

    pruned: list[str] = []
    for fe in spec.fixed_effects:
        getter = FIXED_EFFECT_COLUMNS[fe]
        values = [getter(r) for r in records]
        levels = sorted(set(values))
        if len(levels) < 2:
            pruned.append(f"{fe} (single level {levels[0]!r})")
            continue
        ref = _reference_level(values)
        arr = np.array(values, dtype=object)
        for level in levels:
            if level == ref:
                continue
            names.append(f"{fe}:{level}")
            cols.append((arr == level).astype(float))

    X = np.column_stack(cols)
    keep: list[int] = []
    rank = 0
    for j in range(X.shape[1]):
        trial = X[:, keep + [j]]
        new_rank = int(np.linalg.matrix_rank(trial))
        if new_rank > rank:
            keep.append(j)
            rank = new_rank
        else:
            pruned.append(names[j])
    X = X[:, keep]
    kept_names = tuple(names[j] for j in keep)
    if X.shape[0] < X.shape[1]:
        raise NumericError(
            f"more columns than rows after pruning: {kept_names}"
        )
    return DesignMatrix(X=X, y=y, columns=kept_names, pruned=tuple(pruned))


@dataclass(frozen=True, eq=False)
class DiDEstimate:
    """OLS estimates with the four headline coefficients broken out.

    ``beta0`` is the constant (or the non-participant level under the
    group-level parameterization), ``beta1`` the participant level shift,
    ``beta_trend`` the post-period shift, and ``beta_did`` the interaction.
    """

    coefficients: np.ndarray
    columns: tuple[str, ...]
    covariance: np.ndarray
    se_type: str
    n_obs: int
    beta0: float
    beta1: float
    beta_trend: float
    beta_did: float
    gamma: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        cov = np.asarray(self.covariance, dtype=float)
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise NumericError("covariance not symmetric")
        if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-10:
            raise NumericError("covariance not positive semi-definite")

    def index(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise KeyError(f"no column {column!r}") from None

    def coefficient(self, column: str) -> float:
        return float(self.coefficients[self.index(column)])

    def se(self, column: str) -> float:
        i = self.index(column)
        return float(np.sqrt(self.covariance[i, i]))

    @property
    def se_did(self) -> float:
        return self.se("participant_x_post")

    @property
    def se_trend(self) -> float:
        return self.se("post")

    def did_trend_covariance(self) -> np.ndarray:
        """2x2 covariance block of (interaction, post) in that order."""
        i, j = self.index("participant_x_post"), self.index("post")
        return self.covariance[np.ix_([i, j], [i, j])]


def ols(
    X: np.ndarray,
    y: np.ndarray,
    se_type: str = "classical",
    columns: Sequence[str] | None = None,
) -> DiDEstimate:
    """Least squares with classical or HC1 covariance.

    Column roles are positional when ``columns`` is omitted: the first four
    are (const, participant, post, participant_x_post).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DomainError("X must be 2-d with one y entry per row")
    if X.shape[0] < X.shape[1]:
        raise DomainError("need at least as many rows as columns")
    if se_type not in ("classical", "hc1"):
        raise DomainError(f"unknown se_type {se_type!r}")
    if columns is None:
        defaults = ["const", "participant", "post", "participant_x_post"]
        columns = tuple(
            defaults[i] if i < 4 else f"x{i}" for i in range(X.shape[1])
        )
    else:
        columns = tuple(columns)
        if len(columns) != X.shape[1]:
            raise DomainError("one column name per regressor required")

    rank = int(np.linalg.matrix_rank(X))
    if rank < X.shape[1]:
        raise NumericError(
            f"design matrix rank {rank} < {X.shape[1]} columns: {columns}"
        )

    fit = sm.OLS(y, X).fit() if se_type == "classical" else sm.OLS(y, X).fit(cov_type="HC1")
    coefficients = np.asarray(fit.params, dtype=float)
    cov = np.asarray(fit.cov_params(), dtype=float)
    cov = 0.5 * (cov + cov.T)

    def coef(name: str) -> float:
        return float(coefficients[columns.index(name)]) if name in columns else float("nan")

    headline = {"const", "nonparticipant", "participant", "post", "participant_x_post"}
    gamma = {
        name: float(coefficients[i])
        for i, name in enumerate(columns)
        if name not in headline
    }
    return DiDEstimate(
        coefficients=coefficients,
        columns=columns,
        covariance=cov,
        se_type=se_type,
        n_obs=int(X.shape[0]),
        beta0=coef("const") if "const" in columns else coef("nonparticipant"),
        beta1=coef("participant"),
        beta_trend=coef("post"),
        beta_did=coef("participant_x_post"),
        gamma=gamma,
    )


def did_estimate(
    panel: ContractPanel,
    spec: DiDSpec,
    *,
    se_type: str = "classical",
    suppress_constant: bool = False,
) -> DiDEstimate:
    """Estimate the two-period specification on a panel."""
    years = {r.year for r in panel.records}
    groups = {r.participant for r in panel.records}
    if years != {2014, 2015} or groups != {True, False}:
        raise DomainError("panel must contain both years and both groups")
    dm = design_matrix(panel, spec, suppress_constant=suppress_constant)
    return ols(dm.X, dm.y, se_type=se_type, columns=dm.columns)


@dataclass(frozen=True)
class RobustBound:
    """Interaction estimate under a trend-violation factor g."""

    g: float
    estimate: float
    ci_low: float
    ci_high: float
    se: float

    def __post_init__(self) -> None:
        if not self.ci_low <= self.estimate <= self.ci_high:
            raise NumericError("confidence interval must bracket the estimate")


def robust_bound(est: DiDEstimate, g: float) -> RobustBound:
    """Treatment effect if the treated trend were g times the control trend.

    estimate = beta_did + (1 - g) * beta_trend, with variance propagated
    from the (interaction, post) covariance block. The interval ignores
    sampling variability in g itself and applies no multiplicity adjustment.
    """
    if g < 0:
        raise DomainError(f"violation factor g must be nonnegative, got {g}")
    block = est.did_trend_covariance()
    w = 1.0 - g
    estimate = est.beta_did + w * est.beta_trend
    variance = block[0, 0] + w * w * block[1, 1] + 2.0 * w * block[0, 1]
    se = float(np.sqrt(max(variance, 0.0)))
    return RobustBound(
        g=float(g),
        estimate=float(estimate),
        ci_low=float(estimate - Z_95 * se),
        ci_high=float(estimate + Z_95 * se),
        se=se,
    )


def robust_grid(est: DiDEstimate, g_values) -> tuple[RobustBound, ...]:
    return tuple(robust_bound(est, g) for g in g_values)


def estimate_to_json(est: DiDEstimate) -> dict:
    return {
        "columns": list(est.columns),
        "coefficients": {c: float(v) for c, v in zip(est.columns, est.coefficients)},
        "standard_errors": {c: est.se(c) for c in est.columns},
        "covariance": est.covariance.tolist(),
        "se_type": est.se_type,
        "n_obs": est.n_obs,
        "beta0": est.beta0,
        "beta1": est.beta1,
        "beta_trend": est.beta_trend,
        "beta_did": est.beta_did,
    }


def estimate_from_json(payload: dict) -> DiDEstimate:
    columns = tuple(payload["columns"])
    coefficients = np.array([payload["coefficients"][c] for c in columns])
    headline = {"const", "nonparticipant", "participant", "post", "participant_x_post"}
    return DiDEstimate(
        coefficients=coefficients,
        columns=columns,
        covariance=np.asarray(payload["covariance"], dtype=float),
        se_type=payload["se_type"],
        n_obs=int(payload["n_obs"]),
        beta0=float(payload["beta0"]),
        beta1=float(payload["beta1"]),
        beta_trend=float(payload["beta_trend"]),
        beta_did=float(payload["beta_did"]),
        gamma={c: float(v) for c, v in payload["coefficients"].items()
               if c not in headline},
    )


def write_robust_csv(bounds: Sequence[RobustBound], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["g", "estimate", "ci_low", "ci_high", "se"])
        for b in bounds:
            writer.writerow([repr(b.g), repr(b.estimate), repr(b.ci_low),
                             repr(b.ci_high), repr(b.se)])


def write_estimate_json(est: DiDEstimate, path) -> None:
    with open(path, "w") as fh:
        json.dump(estimate_to_json(est), fh, indent=2, sort_keys=True)
        fh.write("\n")
