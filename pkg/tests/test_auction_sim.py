"""Monte Carlo engine: determinism, pairing, aggregation, and file outputs."""

import csv
import json

import numpy as np
import pytest

from bundleproc import DomainError, SimConfig, run_auction, run_grid, scatter_data
from bundleproc.auction_sim import (
    bundle_cost_mean,
    write_scatter_csv,
    write_summary_csv,
    write_summary_json,
)


def small_config(**overrides):
    base = dict(n_bidders=2, gamma=4.0, replications=64, seed=99)
    base.update(overrides)
    return SimConfig(**base)


class TestRunAuction:
    def test_replay_is_bit_identical(self):
        config = small_config()
        a = run_auction(config, 17)
        b = run_auction(config, 17)
        assert np.array_equal(a.costs, b.costs)
        assert np.array_equal(a.pre_bids, b.pre_bids)
        assert a.pre_payment == b.pre_payment
        assert a.post_payment == b.post_payment

    def test_outcome_internal_consistency(self):
        out = run_auction(small_config(n_bidders=5, gamma=12.0), 3)
        assert out.costs.shape == (5, 2)
        assert np.array_equal(out.pre_total_bids, out.pre_bids.sum(axis=1))
        assert out.pre_payment == pytest.approx(out.pre_bids.min(axis=0).sum())
        assert out.post_payment == out.post_bids.min()
        assert np.all(out.post_payment <= out.post_bids)
        assert np.array_equal(out.pre_winners, out.pre_bids.argmin(axis=0))
        assert out.post_winner == out.post_bids.argmin()
        # bundled bids are priced at the same paired cost draws
        phi = out.costs.sum(axis=1) - 12.0
        assert np.all(out.post_bids >= phi)

    def test_point_mass_costs(self):
        config = SimConfig(
            n_bidders=2, gamma=0.0, replications=4, seed=1,
            mean=40.0, lower=40.0 - 1e-6, upper=40.0 + 1e-6,
        )
        out = run_auction(config, 0)
        assert np.max(np.abs(out.pre_bids - 40.0)) < 1e-3
        assert out.post_payment == pytest.approx(80.0, abs=1e-3)

    def test_replication_index_bounds(self):
        with pytest.raises(DomainError):
            run_auction(small_config(), 64)

    def test_exact_quadrature_matches_table(self):
        table = run_auction(small_config(), 5)
        exact = run_auction(small_config(exact_bids=True), 5)
        assert np.array_equal(table.costs, exact.costs)
        assert np.max(np.abs(table.pre_bids - exact.pre_bids)) < 1e-3
        assert abs(table.post_payment - exact.post_payment) < 1e-2


class TestRunGrid:
    def test_matches_manual_replication_average(self):
        config = small_config()
        summary = run_grid(config, [2], [4.0])
        outcomes = [run_auction(config, i) for i in range(config.replications)]
        cell = summary.cell(2, 4.0)
        assert cell.avg_payment_pre == pytest.approx(
            np.mean([o.pre_payment for o in outcomes]), rel=1e-12
        )
        assert cell.avg_payment_post == pytest.approx(
            np.mean([o.post_payment for o in outcomes]), rel=1e-12
        )
        assert cell.avg_total_bid_pre == pytest.approx(
            np.mean([o.pre_total_bids.mean() for o in outcomes]), rel=1e-12
        )

    def test_thread_count_invariance(self):
        # chunk far below the replication count so the pool really splits work
        base = small_config(replications=5000)
        summaries = [
            run_grid(base, [2, 3], [4.0, 16.0], threads=k, chunk=512)
            for k in (1, 4, 8)
        ]
        for other in summaries[1:]:
            for a, b in zip(summaries[0].cells, other.cells):
                assert a == b  # dataclass equality over float fields: bitwise

    def test_chunk_size_does_not_change_results(self):
        base = small_config(replications=3000)
        whole = run_grid(base, [2], [8.0], chunk=8192)
        split = run_grid(base, [2], [8.0], chunk=257)
        assert whole.cell(2, 8.0).avg_payment_pre == pytest.approx(
            split.cell(2, 8.0).avg_payment_pre, rel=1e-12
        )

    def test_payments_within_support_bounds(self):
        # School-by-school payments can reach 2*lower - 2*gamma when both
        # winners discount the full synergy; bundle payments stay above
        # 2*lower - gamma.
        config = small_config(n_bidders=3, gamma=16.0, replications=2000)
        outcomes = [run_auction(config, i) for i in range(0, 2000, 97)]
        for o in outcomes:
            assert 2 * 10.0 - 2 * 16.0 <= o.pre_payment <= 2 * 100.0
            assert 2 * 10.0 - 16.0 <= o.post_payment <= 2 * 100.0

    def test_payments_monotone_in_synergy_and_competition(self):
        base = small_config(replications=20000)
        summary = run_grid(base, [2, 5], [4.0, 16.0])

        def payment(n, g, which):
            cell = summary.cell(n, g)
            return getattr(cell, which)

        for which in ("avg_payment_pre", "avg_payment_post"):
            assert payment(2, 16.0, which) < payment(2, 4.0, which)
            assert payment(5, 16.0, which) < payment(5, 4.0, which)
            assert payment(5, 4.0, which) < payment(2, 4.0, which)
            assert payment(5, 16.0, which) < payment(2, 16.0, which)

    def test_bundling_lowers_payments_with_two_bidders(self):
        # With thin competition the bundle removes the double-win risk and
        # payments drop; with many bidders the school-by-school minima win.
        base = small_config(replications=20000)
        summary = run_grid(base, [2], [4.0, 8.0, 12.0, 16.0])
        for cell in summary.cells:
            assert cell.avg_payment_post < cell.avg_payment_pre

    def test_bundle_cost_mean_tracks_synergy_shift(self):
        for gamma in (4.0, 16.0):
            config = small_config(gamma=gamma, replications=200000)
            assert bundle_cost_mean(config) == pytest.approx(80.0 - gamma, abs=0.2)


class TestIndependentOracles:
    """Closed-form uniform-law cases checking the whole pricing pipeline.

    For uniform costs on [1, 2] with two bidders and synergy 1/2 the
    school-by-school equilibrium bid reduces algebraically to
    (c_own + c_other)/2, so expected totals and payments have closed forms
    through the triangular law of the cost sum, evaluated here with scipy
    quadrature only.
    """

    R = 200_000

    @staticmethod
    def sum_cdf(x):
        """cdf of c1 + c2 for iid uniform on [1, 2] (triangular on [2, 4])."""
        z = np.clip(x - 2.0, 0.0, 2.0)
        return np.where(z <= 1.0, 0.5 * z**2, 1.0 - 0.5 * (2.0 - z) ** 2)

    def config(self):
        return SimConfig(n_bidders=2, gamma=0.5, replications=self.R, seed=31,
                         mean=1.5, lower=1.0, upper=2.0)

    def test_average_total_bid_is_expected_cost_sum(self):
        summary = run_grid(self.config(), [2], [0.5])
        # per-bidder total = (c1+c2)/2 per school, summed = c1 + c2
        assert summary.cell(2, 0.5).avg_total_bid_pre == pytest.approx(3.0, abs=5e-3)

    def test_average_pre_payment_matches_min_sum_quadrature(self):
        from scipy.integrate import quad

        summary = run_grid(self.config(), [2], [0.5])
        # payment = sum over schools of min_i (c_i1 + c_i2)/2 = min of 2 sums
        expected = 2.0 + quad(lambda x: (1.0 - self.sum_cdf(x)) ** 2, 2.0, 4.0)[0]
        assert summary.cell(2, 0.5).avg_payment_pre == pytest.approx(
            expected, abs=5e-3
        )

    def test_average_post_payment_matches_order_statistic_quadrature(self):
        from scipy.integrate import quad

        summary = run_grid(self.config(), [2], [0.5])
        # E[min bundle bid] = E[phi_(1:2)] + 2 * int F*(1-F*); phi = sum - 1/2
        surv = lambda x: 1.0 - self.sum_cdf(x + 0.5)
        e_min = 1.5 + quad(lambda x: surv(x) ** 2, 1.5, 3.5)[0]
        markup_term = 2.0 * quad(lambda x: (1.0 - surv(x)) * surv(x), 1.5, 3.5)[0]
        assert summary.cell(2, 0.5).avg_payment_post == pytest.approx(
            e_min + markup_term, abs=5e-3
        )


class TestScatter:
    def test_shapes_and_majority_below_diagonal(self):
        config = small_config(gamma=16.0, replications=10000)
        data = scatter_data(config)
        assert data.bid_pre_total.shape == (20000,)
        assert data.payment_pre.shape == (10000,)
        assert data.frac_bids_below_diagonal > 0.8
        # the double-counting region puts at least one point above the diagonal
        assert np.any(data.bid_post > data.bid_pre_total)

    def test_no_synergy_fraction_reported(self):
        data = scatter_data(small_config(gamma=0.0, replications=2000))
        assert 0.0 <= data.frac_bids_below_diagonal <= 1.0
        assert 0.0 <= data.frac_payments_below_diagonal <= 1.0


class TestWriters:
    def test_summary_csv_roundtrip(self, tmp_path):
        summary = run_grid(small_config(replications=200), [2, 3], [4.0, 8.0])
        path = tmp_path / "summary.csv"
        write_summary_csv(summary, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        first = summary.cells[0]
        assert int(rows[0]["n"]) == first.n_bidders
        assert float(rows[0]["avg_payment_pre"]) == first.avg_payment_pre

    def test_summary_json(self, tmp_path):
        summary = run_grid(small_config(replications=100), [2], [4.0])
        path = tmp_path / "summary.json"
        write_summary_json(summary, path)
        payload = json.loads(path.read_text())
        assert payload["replications"] == 100
        assert payload["cells"][0]["avg_payment_post"] == summary.cells[0].avg_payment_post

    def test_scatter_csv(self, tmp_path):
        data = scatter_data(small_config(replications=50))
        path = tmp_path / "scatter.csv"
        write_scatter_csv(data, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 100  # replications x bidders
        assert float(rows[0]["pre_payment"]) == data.payment_pre[0]
