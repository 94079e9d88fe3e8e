"""Expenditure-savings bounds, two-point welfare bounds, and price gaps.

Expenditure savings are valued at old vs. effect-adjusted bandwidths, giving
a lower and an upper bound per participant. Welfare changes are bounded from
each school's two observed (price, quantity) points; the upper bound is the
exact surplus change for exponential demand through the two points. The gap
report compares non-participants' prices with their region's winning tariff.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import DomainError, PanelValidationError
from .panel_data import ContractPanel

MONTHS_PER_YEAR = 12
PRICE_FLOOR = 0.01
QUANTITY_MATCH_RTOL = 1e-9


@dataclass(frozen=True)
class ExpenditureBounds:
    """Aggregate savings bounds and the subsidy benchmark (same subsample)."""

    lower: float
    upper: float
    subsidy: float
    beta_price: float
    beta_mbps: float
    annualized: bool
    n_schools: int
    monthly_lower: float | None = None
    monthly_upper: float | None = None
    monthly_subsidy: float | None = None


def expenditure_bounds(
    participants: ContractPanel,
    beta_price: float,
    beta_mbps: float,
    *,
    monthly_inputs: bool = True,
    base_year: int = 2014,
) -> ExpenditureBounds:
    """Savings bounds from the estimated price and bandwidth effects.

    Per school: lower bound values the price effect at the base-year
    bandwidth, the upper bound at the effect-adjusted bandwidth, both net of
    the subsidy share; the subsidy benchmark is the base-year reimbursement.
    Sums are annualized (x12) when inputs are monthly.
    """
    records = [r for r in participants.records if r.year == base_year]
    if not records:
        raise DomainError(f"no {base_year} records in panel")
    missing = [(i, f"school {r.school_id} missing subsidy_rate")
               for i, r in enumerate(records, start=1) if r.subsidy_rate is None]
    if missing:
        raise PanelValidationError(missing)
    if beta_price > 0:
        warnings.warn(
            "beta_price > 0 inverts the savings bounds; computing anyway",
            stacklevel=2,
        )

    one_minus_rho = [1.0 - r.subsidy_rate for r in records]
    lower = -beta_price * sum(r.bandwidth * w for r, w in zip(records, one_minus_rho))
    # Algebraically identical to summing -beta_price*(Q0+beta_mbps)*(1-rho);
    # this form keeps upper - lower exact.
    upper = lower + (-beta_price) * beta_mbps * sum(one_minus_rho)
    subsidy = sum(r.bandwidth * r.price * r.subsidy_rate for r in records)

    if monthly_inputs:
        return ExpenditureBounds(
            lower=MONTHS_PER_YEAR * lower,
            upper=MONTHS_PER_YEAR * upper,
            subsidy=MONTHS_PER_YEAR * subsidy,
            beta_price=beta_price,
            beta_mbps=beta_mbps,
            annualized=True,
            n_schools=len(records),
            monthly_lower=lower,
            monthly_upper=upper,
            monthly_subsidy=subsidy,
        )
    return ExpenditureBounds(
        lower=lower, upper=upper, subsidy=subsidy,
        beta_price=beta_price, beta_mbps=beta_mbps,
        annualized=False, n_schools=len(records),
    )


@dataclass(frozen=True)
class WelfareBound:
    """Two-point bounds on one school's monthly surplus change."""

    school_id: str
    lower: float
    upper: float
    p0: float
    p1: float
    q0: float
    q1: float
    clamped: bool = False

    def __post_init__(self) -> None:
        scale = max(abs(self.lower), abs(self.upper), 1.0)
        if self.lower > self.upper + 1e-12 * scale:
            raise DomainError(
                f"school {self.school_id or '<anon>'}: bounds inverted; the "
                "(price, quantity) pair is inconsistent with downward-sloping demand"
            )


def welfare_bounds(
    p0: float, p1: float, q0: float, q1: float,
    *, school_id: str = "", clamped: bool = False,
) -> WelfareBound:
    """Surplus-change bounds from before/after (price, quantity) points.

    lower = q0*(p0 - p1); upper = (p0 - p1)*(q1 - q0)/ln(q1/q0), the exact
    change for exponential demand through the two points. When q1 ~= q0 both
    collapse to the common continuous limit q0*(p0 - p1).
    """
    if min(p0, p1, q0, q1) <= 0:
        raise DomainError(
            f"prices and quantities must be positive, got {(p0, p1, q0, q1)}"
        )
    dp = p0 - p1
    if abs(q1 - q0) < QUANTITY_MATCH_RTOL * q0:
        lower = upper = q0 * dp
    else:
        lower = q0 * dp
        # log1p of the relative gap keeps the logarithmic mean accurate when
        # q1 is close to q0 (log(q1/q0) quantizes near 1).
        upper = dp * (q1 - q0) / math.log1p((q1 - q0) / q0)
    return WelfareBound(
        school_id=school_id, lower=lower, upper=upper,
        p0=p0, p1=p1, q0=q0, q1=q1, clamped=clamped,
    )


def welfare_report(
    panel: ContractPanel,
    mode: str = "observed",
    *,
    beta_price: float | None = None,
    beta_mbps: float | None = None,
    price_floor: float = PRICE_FLOOR,
) -> list[WelfareBound]:
    """Per-school welfare bounds over a panel already screened for use.

    ``observed`` uses each school's actual year pair. ``counterfactual``
    replaces the post period with P1 = P0 + beta_price (clamped at a small
    positive floor, flagged per school) and Q1 = Q0 + beta_mbps.
    """
    if mode not in ("observed", "counterfactual"):
        raise DomainError(f"unknown mode {mode!r}")
    if mode == "counterfactual" and (beta_price is None or beta_mbps is None):
        raise DomainError("counterfactual mode requires beta_price and beta_mbps")

    out: list[WelfareBound] = []
    for school_id, years in sorted(panel.by_school().items()):
        if 2014 not in years or 2015 not in years:
            raise DomainError(f"school {school_id} lacks one of the two years")
        r0 = years[2014]
        if mode == "observed":
            r1 = years[2015]
            out.append(welfare_bounds(
                r0.price, r1.price, r0.bandwidth, r1.bandwidth, school_id=school_id
            ))
        else:
            p1 = r0.price + beta_price
            clamped = p1 < price_floor
            p1 = max(p1, price_floor)
            q1 = r0.bandwidth + beta_mbps
            out.append(welfare_bounds(
                r0.price, p1, r0.bandwidth, q1, school_id=school_id, clamped=clamped
            ))
    return out


@dataclass(frozen=True)
class CounterfactualGap:
    """Actual vs. winning-tariff price for one non-participant school."""

    school_id: str
    actual_price: float
    consortium_price: float

    @property
    def gap(self) -> float:
        return self.actual_price - self.consortium_price


@dataclass(frozen=True)
class GapReport:
    """Gap list plus per-school skip diagnostics."""

    gaps: tuple[CounterfactualGap, ...]
    skipped: tuple[tuple[str, str], ...]

    @property
    def n_positive(self) -> int:
        return sum(1 for g in self.gaps if g.gap > 0)

    @property
    def n_nonpositive(self) -> int:
        return sum(1 for g in self.gaps if g.gap <= 0)

    @property
    def mean_positive_gap(self) -> float | None:
        vals = [g.gap for g in self.gaps if g.gap > 0]
        return sum(vals) / len(vals) if vals else None

    @property
    def mean_nonpositive_gap(self) -> float | None:
        vals = [g.gap for g in self.gaps if g.gap <= 0]
        return sum(vals) / len(vals) if vals else None

    def summary(self) -> dict:
        return {
            "n_schools": len(self.gaps) + len(self.skipped),
            "n_positive": self.n_positive,
            "mean_positive_gap": self.mean_positive_gap,
            "n_nonpositive": self.n_nonpositive,
            "mean_nonpositive_gap": self.mean_nonpositive_gap,
            "n_skipped": len(self.skipped),
        }


def counterfactual_gap(
    panel: ContractPanel,
    consortium_prices: Mapping[str, Mapping[float, float]],
    *,
    year: int = 2015,
) -> GapReport:
    """Per-school price gap against the region's winning tariff schedule.

    Schedules are step functions keyed by bandwidth tier; a school whose
    region or bandwidth tier is missing is skipped with a diagnostic rather
    than failing the run.
    """
    gaps: list[CounterfactualGap] = []
    skipped: list[tuple[str, str]] = []
    for rec in panel.records:
        if rec.year != year:
            continue
        schedule = consortium_prices.get(rec.region)
        if not schedule:
            skipped.append((rec.school_id, f"no schedule for region {rec.region!r}"))
            continue
        price = schedule.get(rec.bandwidth)
        if price is None:
            skipped.append((
                rec.school_id,
                f"no {rec.bandwidth} Mbps tier in region {rec.region!r} schedule",
            ))
            continue
        gaps.append(CounterfactualGap(
            school_id=rec.school_id,
            actual_price=rec.price,
            consortium_price=float(price),
        ))
    return GapReport(gaps=tuple(gaps), skipped=tuple(skipped))


def expenditure_to_json(bounds: ExpenditureBounds) -> dict:
    return {
        "lower": bounds.lower,
        "upper": bounds.upper,
        "subsidy": bounds.subsidy,
        "beta_price": bounds.beta_price,
        "beta_mbps": bounds.beta_mbps,
        "annualized": bounds.annualized,
        "n_schools": bounds.n_schools,
        "monthly_lower": bounds.monthly_lower,
        "monthly_upper": bounds.monthly_upper,
        "monthly_subsidy": bounds.monthly_subsidy,
    }


def write_expenditure_json(bounds: ExpenditureBounds, path) -> None:
    with open(path, "w") as fh:
        json.dump(expenditure_to_json(bounds), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_welfare_csv(bounds: Sequence[WelfareBound], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["school_id", "p0", "p1", "q0", "q1", "lower", "upper", "clamped"])
        for b in bounds:
            writer.writerow([
                b.school_id, repr(b.p0), repr(b.p1), repr(b.q0), repr(b.q1),
                repr(b.lower), repr(b.upper), "true" if b.clamped else "false",
            ])


def write_gap_csv(report: GapReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["school_id", "actual_price", "consortium_price", "gap"])
        for g in report.gaps:
            writer.writerow([
                g.school_id, repr(g.actual_price), repr(g.consortium_price), repr(g.gap),
            ])


def write_gap_summary_json(report: GapReport, path) -> None:
    payload = report.summary()
    payload["skipped"] = [{"school_id": s, "reason": r} for s, r in report.skipped]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
