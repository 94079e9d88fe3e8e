"""Savings bounds, welfare bounds, and tariff-gap reports against oracles."""

import csv
import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from bundleproc import (
    ContractPanel,
    ContractRecord,
    DomainError,
    PanelValidationError,
    counterfactual_gap,
    expenditure_bounds,
    expenditure_calibrated_panel,
    welfare_bounds,
    welfare_report,
)
from bundleproc.policy_bounds import (
    write_expenditure_json,
    write_gap_csv,
    write_gap_summary_json,
    write_welfare_csv,
)


def record(school_id, *, year=2014, price=12.0, bandwidth=100.0, rho=0.5,
           participant=True, region="South", **overrides):
    base = dict(
        school_id=school_id, year=year, participant=participant, price=price,
        bandwidth=bandwidth, isp="Comcast", region=region, category="D",
        transport="fiber", n_isps=5, school_type="public", subsidy_rate=rho,
    )
    base.update(overrides)
    return ContractRecord(**base)


class TestExpenditureBounds:
    def test_single_school_collapsed_bounds(self):
        panel = ContractPanel(records=(record("s", price=10.0, bandwidth=100.0, rho=0.5),))
        out = expenditure_bounds(panel, -1.0, 0.0, monthly_inputs=False)
        assert out.lower == out.upper == 50.0
        assert out.subsidy == pytest.approx(10.0 * 100.0 * 0.5)
        assert out.annualized is False

    def test_annualization(self):
        panel = ContractPanel(records=(record("s", price=10.0, bandwidth=100.0, rho=0.5),))
        out = expenditure_bounds(panel, -1.0, 0.0)
        assert out.lower == 12 * 50.0
        assert out.monthly_lower == 50.0

    def test_zero_bandwidth_effect_collapses_exactly(self):
        panel = expenditure_calibrated_panel(
            -9.174, 380.062, 1_618_269.0, 3_482_281.0, 2_474_609.0, seed=3
        )
        out = expenditure_bounds(panel, -9.174, 0.0)
        assert out.upper == out.lower

    def test_difference_identity_exact(self):
        panel = expenditure_calibrated_panel(
            -9.174, 380.062, 1_618_269.0, 3_482_281.0, 2_474_609.0, seed=5
        )
        out = expenditure_bounds(panel, -9.174, 380.062, monthly_inputs=False)
        srho = sum(1.0 - r.subsidy_rate for r in panel.records)
        identity = 9.174 * 380.062 * srho
        assert out.upper - out.lower == pytest.approx(identity, rel=1e-12)

    def test_reference_amounts_reproduced(self):
        panel = expenditure_calibrated_panel(
            -9.174, 380.062, 1_618_269.0, 3_482_281.0, 2_474_609.0, seed=0
        )
        out = expenditure_bounds(panel, -9.174, 380.062)
        assert out.lower == pytest.approx(1_618_269.0, rel=1e-3)
        assert out.upper == pytest.approx(3_482_281.0, rel=1e-3)
        assert out.subsidy == pytest.approx(2_474_609.0, rel=1e-3)
        assert out.lower <= out.upper

    def test_missing_subsidy_rate_rejected(self):
        panel = ContractPanel(records=(record("s", rho=None),))
        with pytest.raises(PanelValidationError, match="missing subsidy_rate"):
            expenditure_bounds(panel, -1.0, 0.0)

    def test_positive_price_effect_warns_and_inverts(self):
        panel = ContractPanel(records=(record("s", bandwidth=100.0, rho=0.5),))
        with pytest.warns(UserWarning, match="inverts"):
            out = expenditure_bounds(panel, 1.0, 10.0, monthly_inputs=False)
        assert out.lower == -50.0
        assert out.upper == out.lower - 1.0 * 10.0 * 0.5

    def test_requires_base_year_records(self):
        panel = ContractPanel(records=(record("s", year=2015),))
        with pytest.raises(DomainError):
            expenditure_bounds(panel, -1.0, 0.0)


def exponential_demand_change(p0, p1, q0, q1):
    """Surplus change for exponential demand through both points (quadrature)."""
    b = math.log(q1 / q0) / (p0 - p1)
    a = q0 * math.exp(b * p0)
    value, _ = quad(lambda p: a * math.exp(-b * p), p1, p0, epsrel=1e-12)
    return value


def linear_demand_change(p0, p1, q0, q1):
    slope = (q1 - q0) / (p1 - p0)
    value, _ = quad(lambda p: q0 + slope * (p - p0), p1, p0, epsrel=1e-12)
    return value


class TestWelfareBounds:
    def test_equal_quantities_collapse(self):
        out = welfare_bounds(10.0, 5.0, 100.0, 100.0)
        assert out.lower == out.upper == 500.0

    def test_reference_pair(self):
        out = welfare_bounds(10.0, 5.0, 100.0, 200.0)
        assert out.lower == 500.0
        assert out.upper == pytest.approx(5.0 * 100.0 / math.log(2.0), rel=1e-12)
        assert out.upper == pytest.approx(721.348, abs=1e-3)

    def test_nonpositive_inputs_rejected(self):
        for bad in ((0.0, 5.0, 1.0, 2.0), (10.0, -1.0, 1.0, 2.0),
                    (10.0, 5.0, 0.0, 2.0), (10.0, 5.0, 1.0, 0.0)):
            with pytest.raises(DomainError):
                welfare_bounds(*bad)

    def test_inconsistent_pair_rejected(self):
        # price fell but quantity fell too: no downward-sloping demand fits
        with pytest.raises(DomainError, match="downward-sloping"):
            welfare_bounds(10.0, 5.0, 200.0, 100.0)

    def test_exponential_demand_attains_upper_bound(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            p1, p0 = np.sort(rng.uniform(1.0, 50.0, 2) + [0.0, 1.0])
            q0, q1 = np.sort(rng.uniform(10.0, 2000.0, 2) + [0.0, 1.0])
            out = welfare_bounds(p0, p1, q0, q1)
            exact = exponential_demand_change(p0, p1, q0, q1)
            assert abs(exact - out.upper) <= 1e-9 * max(1.0, abs(out.upper))
            assert out.lower <= out.upper

    def test_linear_demand_exceeds_log_linear_upper_bound(self):
        # Linear demand integrates to the arithmetic mean of quantities, which
        # strictly exceeds the logarithmic mean in the upper bound; the bound
        # is sharp only for the exponential family.
        rng = np.random.default_rng(43)
        for _ in range(100):
            p1, p0 = np.sort(rng.uniform(1.0, 50.0, 2) + [0.0, 1.0])
            q0, q1 = np.sort(rng.uniform(10.0, 2000.0, 2) + [0.0, 1.0])
            out = welfare_bounds(p0, p1, q0, q1)
            linear = linear_demand_change(p0, p1, q0, q1)
            assert linear > out.upper
            assert linear > out.lower

    def test_quantity_limit_is_continuous(self):
        base = welfare_bounds(10.0, 5.0, 100.0, 100.0)
        # straddle the collapse threshold: both sides agree with the limit
        inside = welfare_bounds(10.0, 5.0, 100.0, 100.0 * (1.0 + 5e-10))
        outside = welfare_bounds(10.0, 5.0, 100.0, 100.0 * (1.0 + 2e-9))
        assert inside.upper == base.upper == 500.0
        assert abs(outside.upper - base.upper) < 1e-6
        assert abs(outside.lower - base.lower) < 1e-6

    def test_monotone_in_price_drop_and_quantity(self):
        a = welfare_bounds(10.0, 6.0, 100.0, 150.0)
        b = welfare_bounds(10.0, 5.0, 100.0, 150.0)   # bigger price drop
        c = welfare_bounds(10.0, 6.0, 100.0, 250.0)   # bigger post quantity
        assert b.lower > a.lower and b.upper > a.upper
        assert c.upper > a.upper and c.lower == a.lower


def screened_panel(prices=(20.0, 15.0, 8.0), seed=0):
    records = []
    for i, p0 in enumerate(prices):
        records.append(record(f"w{i}", year=2014, price=p0, bandwidth=100.0 + i))
        records.append(record(f"w{i}", year=2015, price=p0 * 0.6,
                              bandwidth=160.0 + i))
    return ContractPanel(records=tuple(records))


class TestWelfareReport:
    def test_zero_effects_give_zero_bounds(self):
        out = welfare_report(screened_panel(), "counterfactual",
                             beta_price=0.0, beta_mbps=0.0)
        assert all(b.lower == b.upper == 0.0 for b in out)

    def test_counterfactual_signs_positive(self):
        out = welfare_report(screened_panel(), "counterfactual",
                             beta_price=-9.17, beta_mbps=380.06)
        assert all(b.lower > 0 for b in out)
        assert all(b.upper >= b.lower for b in out)

    def test_price_floor_clamps_and_flags(self):
        panel = ContractPanel(records=(
            record("cheap", year=2014, price=5.0),
            record("cheap", year=2015, price=4.0),
        ))
        out = welfare_report(panel, "counterfactual",
                             beta_price=-9.17, beta_mbps=380.06)
        assert out[0].clamped
        assert out[0].p1 == 0.01

    def test_observed_mode_sorted_by_school(self):
        out = welfare_report(screened_panel(), "observed")
        assert [b.school_id for b in out] == ["w0", "w1", "w2"]
        manual = welfare_bounds(20.0, 12.0, 100.0, 160.0)
        assert out[0].lower == manual.lower and out[0].upper == manual.upper

    def test_counterfactual_requires_betas(self):
        with pytest.raises(DomainError):
            welfare_report(screened_panel(), "counterfactual")

    def test_missing_year_rejected(self):
        panel = ContractPanel(records=(record("solo", year=2014),))
        with pytest.raises(DomainError):
            welfare_report(panel, "observed")


def gap_panel(actual_prices, region="South", start=0):
    records = [
        record(f"g{start + i}", year=2015, price=p, bandwidth=100.0,
               participant=False, region=region)
        for i, p in enumerate(actual_prices)
    ]
    return ContractPanel(records=tuple(records))


class TestCounterfactualGap:
    def test_identity_prices_give_zero_gaps(self):
        panel = gap_panel([7.0, 7.0, 7.0])
        report = counterfactual_gap(panel, {"South": {100.0: 7.0}})
        assert all(g.gap == 0.0 for g in report.gaps)
        assert report.n_positive == 0
        assert report.n_nonpositive == 3

    def test_constructed_reference_summary(self):
        winning = 7.0
        prices = [winning + 9.47] * 57 + [winning - 0.61] * 12
        report = counterfactual_gap(gap_panel(prices), {"South": {100.0: winning}})
        assert report.n_positive == 57
        assert report.mean_positive_gap == pytest.approx(9.47, abs=1e-9)
        assert report.n_nonpositive == 12
        assert report.mean_nonpositive_gap == pytest.approx(-0.61, abs=1e-9)
        assert report.summary()["n_skipped"] == 0

    def test_missing_region_and_tier_skipped(self):
        records = (
            record("ok", year=2015, price=9.0, bandwidth=100.0, participant=False),
            record("no_region", year=2015, price=9.0, bandwidth=100.0,
                   participant=False, region="Northwest"),
            record("no_tier", year=2015, price=9.0, bandwidth=250.0,
                   participant=False),
        )
        report = counterfactual_gap(
            ContractPanel(records=records), {"South": {100.0: 7.0}}
        )
        assert len(report.gaps) == 1
        assert {s for s, _ in report.skipped} == {"no_region", "no_tier"}
        assert report.n_positive + report.n_nonpositive + len(report.skipped) == 3

    def test_counts_partition_input(self):
        rng = np.random.default_rng(9)
        prices = list(rng.uniform(3.0, 12.0, 40))
        report = counterfactual_gap(gap_panel(prices), {"South": {100.0: 7.0}})
        assert report.n_positive + report.n_nonpositive + len(report.skipped) == 40


class TestWriters:
    def test_welfare_csv(self, tmp_path):
        out = welfare_report(screened_panel(), "observed")
        path = tmp_path / "w.csv"
        write_welfare_csv(out, path)
        rows = list(csv.DictReader(open(path, newline="")))
        assert len(rows) == 3
        assert float(rows[0]["lower"]) == out[0].lower

    def test_gap_outputs(self, tmp_path):
        report = counterfactual_gap(gap_panel([8.0, 6.0]), {"South": {100.0: 7.0}})
        write_gap_csv(report, tmp_path / "g.csv")
        write_gap_summary_json(report, tmp_path / "g.json")
        rows = list(csv.DictReader(open(tmp_path / "g.csv", newline="")))
        assert len(rows) == 2
        summary = json.loads((tmp_path / "g.json").read_text())
        assert summary["n_positive"] == 1

    def test_expenditure_json(self, tmp_path):
        panel = ContractPanel(records=(record("s"),))
        bounds = expenditure_bounds(panel, -1.0, 10.0)
        write_expenditure_json(bounds, tmp_path / "e.json")
        payload = json.loads((tmp_path / "e.json").read_text())
        assert payload["lower"] == bounds.lower
        assert payload["annualized"] is True
