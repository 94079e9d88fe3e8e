"""Cost-law primitives against independent quadrature and sampling oracles."""

import numpy as np
import pytest
from scipy.integrate import quad

from bundleproc import DomainError, convolve_bundle, make_truncated_exponential


class TestTruncatedExponential:
    def test_quadrature_mean_matches_target(self, cost_law):
        mean, err = quad(lambda t: t * cost_law.pdf(t), 10.0, 100.0, epsabs=1e-12)
        assert err < 1e-9
        assert abs(mean - 40.0) < 1e-8
        assert abs(cost_law.mean() - 40.0) < 1e-8
        assert cost_law.target_mean == 40.0

    def test_pdf_integrates_to_one(self, cost_law):
        mass, _ = quad(cost_law.pdf, 10.0, 100.0, epsabs=1e-12)
        assert abs(mass - 1.0) < 1e-9

    def test_midpoint_mean_gives_uniform_limit(self):
        law = make_truncated_exponential(55.0, 10.0, 100.0)
        assert law.rate == 0.0
        assert abs(law.cdf(55.0) - 0.5) < 1e-6
        assert abs(law.pdf(30.0) - 1.0 / 90.0) < 1e-12

    def test_infeasible_mean_rejected(self):
        with pytest.raises(DomainError):
            make_truncated_exponential(5.0, 10.0, 100.0)
        with pytest.raises(DomainError):
            make_truncated_exponential(100.0, 10.0, 100.0)
        with pytest.raises(DomainError):
            make_truncated_exponential(40.0, 100.0, 10.0)

    def test_mean_above_midpoint_supported(self):
        law = make_truncated_exponential(70.0, 10.0, 100.0)
        assert law.rate < 0
        assert abs(law.mean() - 70.0) < 1e-8

    def test_cdf_endpoints_and_monotonicity(self, cost_law):
        assert cost_law.cdf(10.0) == 0.0
        assert cost_law.cdf(100.0) == 1.0
        grid = np.linspace(10.0, 100.0, 500)
        values = cost_law.cdf(grid)
        assert np.all(np.diff(values) > 0)
        assert np.all(cost_law.pdf(grid[1:-1]) > 0)

    def test_quantile_cdf_roundtrip(self, cost_law):
        xs = np.linspace(10.0 + 1e-9, 100.0 - 1e-9, 200)
        back = cost_law.quantile(cost_law.cdf(xs))
        assert np.max(np.abs(back - xs)) < 1e-9

    def test_inverse_consistency(self, cost_law):
        u = np.random.default_rng(42).random(1000)
        assert np.max(np.abs(cost_law.cdf(cost_law.quantile(u)) - u)) < 1e-8

    def test_quantile_boundaries(self, cost_law):
        assert cost_law.quantile(0.0) == 10.0
        assert cost_law.quantile(1.0) == 100.0
        assert cost_law.quantile(1e-12) < 10.0 + 1e-8
        assert cost_law.quantile(1.0 - 1e-12) > 100.0 - 1e-6
        with pytest.raises(DomainError):
            cost_law.quantile(1.5)

    def test_empirical_mean_of_million_draws(self, cost_law):
        rng = np.random.default_rng(7)
        draws = cost_law.sample(rng, 1_000_000)
        assert abs(draws.mean() - 40.0) < 0.1
        assert draws.min() >= 10.0 and draws.max() <= 100.0

    def test_rate_from_mean_flag(self):
        law = make_truncated_exponential(40.0, 10.0, 100.0, rate_from_mean=True)
        assert law.rate == 1.0 / 40.0
        assert law.target_mean is None
        assert law.mean() != 40.0  # truncation shifts the raw-exponential mean


def triangular_cdf(x):
    """Sum of two independent U(0,1): closed-form convolution."""
    x = np.asarray(x, dtype=float)
    lower = 0.5 * x**2
    upper = 1.0 - 0.5 * (2.0 - x) ** 2
    return np.where(x <= 1.0, lower, upper)


class TestBundleConvolution:
    def test_support_endpoints(self, cost_law):
        bundle = convolve_bundle(cost_law, 0.0)
        assert bundle.cdf(20.0) == 0.0
        assert bundle.cdf(200.0) == 1.0
        assert bundle.lower == 20.0 and bundle.upper == 200.0

    def test_triangular_oracle(self, unit_uniform):
        bundle = convolve_bundle(unit_uniform, 0.0)
        xs = np.linspace(0.05, 1.95, 39)
        assert np.max(np.abs(bundle.cdf(xs) - triangular_cdf(xs))) < 1e-4
        assert abs(bundle.cdf(1.0) - 0.5) < 1e-4

    def test_translation_identity(self, cost_law):
        base = convolve_bundle(cost_law, 0.0)
        shifted = convolve_bundle(cost_law, 4.0)
        xs = np.linspace(shifted.lower, shifted.upper, 117)
        assert np.max(np.abs(shifted.cdf(xs) - base.cdf(xs + 4.0))) < 1e-8

    def test_gamma_out_of_range(self, cost_law):
        with pytest.raises(DomainError):
            convolve_bundle(cost_law, -1.0)
        with pytest.raises(DomainError):
            convolve_bundle(cost_law, 20.0 + 1e-9)
        with pytest.raises(DomainError):
            convolve_bundle(cost_law, 4.0, grid_size=128)

    def test_monotone_and_clamped(self, cost_law):
        bundle = convolve_bundle(cost_law, 8.0)
        assert np.all(np.diff(bundle.cdf_values) >= 0)
        assert bundle.cdf_values[0] == 0.0 and bundle.cdf_values[-1] == 1.0

    def test_empirical_convolution_agreement(self, cost_law):
        # Monte Carlo noise floors the achievable tolerance near 1.5e-3 for
        # 1e6 draws (DKW); the quadrature cdf itself is far more accurate.
        bundle = convolve_bundle(cost_law, 8.0)
        rng = np.random.default_rng(123)
        sums = cost_law.sample(rng, 1_000_000) + cost_law.sample(rng, 1_000_000) - 8.0
        points = np.linspace(bundle.lower, bundle.upper, 52)[1:-1]
        empirical = np.searchsorted(np.sort(sums), points, side="right") / sums.size
        assert np.max(np.abs(bundle.cdf(points) - empirical)) < 1.5e-3

    def test_bundle_mean(self, cost_law):
        for gamma in (0.0, 8.0, 16.0):
            bundle = convolve_bundle(cost_law, gamma)
            assert abs(bundle.mean() - (80.0 - gamma)) < 0.05
        rng = np.random.default_rng(5)
        sums = cost_law.sample(rng, 1_000_000) + cost_law.sample(rng, 1_000_000) - 16.0
        assert abs(sums.mean() - 64.0) < 0.05

    def test_grid_pairs_shape(self, cost_law):
        bundle = convolve_bundle(cost_law, 4.0, grid_size=512)
        assert bundle.grid.shape == (512, 2)
        assert np.all(bundle.grid[:, 0] == bundle.support)
