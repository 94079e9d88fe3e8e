"""Equilibrium bid functions for the two procurement formats.

Under school-by-school (decentralized) procurement a bidder's bid for one
school is its cost there, plus a standalone markup, minus the synergy
discounted by the chance of winning the other school. Under pure bundling
the bid is the bundled cost plus the analogous markup against the
bundled-cost law.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import BundleCostDistribution, CostDistribution, convolve_bundle
from .errors import DomainError

# Below this survival probability the markup is taken at its limit value of
# zero, avoiding catastrophic cancellation near the top of the support.
SURVIVAL_FLOOR = 1e-12

QUAD_TOL = 1e-8
QUAD_MAX_DEPTH = 40


def adaptive_simpson(f, a: float, b: float, *, tol: float = QUAD_TOL,
                     max_depth: int = QUAD_MAX_DEPTH) -> float:
    """Adaptive Simpson quadrature with Richardson correction.

    ``f`` must accept scalar floats. Absolute tolerance ``tol``; recursion
    stops at ``max_depth`` regardless.
    """
    if b <= a:
        return 0.0

    def simpson(x0, f0, x2, f2, x1, f1):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, f0, x2, f2, x1, f1, whole, tol, depth):
        xl = 0.5 * (x0 + x1)
        xr = 0.5 * (x1 + x2)
        fl = f(xl)
        fr = f(xr)
        left = simpson(x0, f0, x1, f1, xl, fl)
        right = simpson(x1, f1, x2, f2, xr, fr)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol or (x2 - x0) < 1e-14 * span:
            return left + right + delta / 15.0
        return recurse(x0, f0, x1, f1, xl, fl, left, 0.5 * tol, depth - 1) + recurse(
            x1, f1, x2, f2, xr, fr, right, 0.5 * tol, depth - 1
        )

    span = b - a
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    return recurse(a, fa, b, fb, m, fm, simpson(a, fa, b, fb, m, fm), tol, max_depth)


@dataclass(frozen=True, eq=False)
class MarketConfig:
    """Immutable market primitives: bidder count, synergy, and cost laws.

    ``bundle_dist`` may be ``None`` when the synergy exceeds twice the lower
    cost bound (the bundled-cost law is undefined there); such a config
    supports the school-by-school operations only.
    """

    n_bidders: int
    gamma: float
    dist: CostDistribution
    bundle_dist: BundleCostDistribution | None

    def __post_init__(self) -> None:
        if int(self.n_bidders) != self.n_bidders or self.n_bidders < 2:
            raise DomainError(f"need at least 2 bidders, got {self.n_bidders}")
        if self.gamma < 0:
            raise DomainError(f"synergy must be nonnegative, got {self.gamma}")
        if self.bundle_dist is not None and (
            self.bundle_dist.source is not self.dist
            or self.bundle_dist.gamma != self.gamma
        ):
            raise DomainError("bundle_dist must be the convolution of (dist, gamma)")

    @classmethod
    def build(
        cls,
        n_bidders: int,
        gamma: float,
        dist: CostDistribution,
        grid_size: int = 2048,
    ) -> "MarketConfig":
        """Construct with a consistent bundled-cost law where one exists."""
        bundle = (
            convolve_bundle(dist, gamma, grid_size)
            if gamma <= 2.0 * dist.lower
            else None
        )
        return cls(
            n_bidders=int(n_bidders),
            gamma=float(gamma),
            dist=dist,
            bundle_dist=bundle,
        )


def _check_support(x: float, lo: float, hi: float, what: str) -> None:
    slack = 1e-9 * (hi - lo)
    if not (lo - slack <= x <= hi + slack):
        raise DomainError(f"{what} {x} outside support [{lo}, {hi}]")


def standalone_markup(config: MarketConfig, c: float) -> float:
    """Markup added to own cost in the school-by-school equilibrium bid.

    Computed as the integral of survival^(n-1) from c to the top of the
    support, divided once by survival(c)^(n-1); exactly 0 at the top.
    """
    dist = config.dist
    _check_support(c, dist.lower, dist.upper, "cost")
    exponent = config.n_bidders - 1
    denom = float(dist.survival(c)) ** exponent
    if denom < SURVIVAL_FLOOR:
        return 0.0
    integral = adaptive_simpson(
        lambda t: float(dist.survival(t)) ** exponent, c, dist.upper
    )
    return integral / denom


def decentralized_bid(config: MarketConfig, c_own: float, c_other: float) -> float:
    """Equilibrium bid for one school under school-by-school procurement.

    ``c_own`` is the bidder's cost at the school being bid for, ``c_other``
    its cost at the other school. The synergy enters through the discount
    term gamma * survival(c_other)^(n-1); with gamma = 0 this reduces to the
    standard single-item procurement bid.
    """
    dist = config.dist
    _check_support(c_own, dist.lower, dist.upper, "own cost")
    _check_support(c_other, dist.lower, dist.upper, "other-school cost")
    discount = config.gamma * float(dist.survival(c_other)) ** (config.n_bidders - 1)
    return c_own + standalone_markup(config, c_own) - discount


def bundled_bid(config: MarketConfig, phi: float) -> float:
    """Equilibrium bid on the whole bundle given bundled cost ``phi``."""
    bundle = config.bundle_dist
    if bundle is None:
        raise DomainError(
            "config has no bundled-cost law (synergy exceeds twice the lower bound)"
        )
    _check_support(phi, bundle.lower, bundle.upper, "bundled cost")
    exponent = config.n_bidders - 1
    denom = float(bundle.survival(phi)) ** exponent
    if denom < SURVIVAL_FLOOR:
        return phi
    integral = adaptive_simpson(
        lambda t: float(bundle.survival(t)) ** exponent, phi, bundle.upper
    )
    return phi + integral / denom


def _tail_integral_table(grid: np.ndarray, integrand, refine: int) -> np.ndarray:
    """Integral of ``integrand`` from each grid node to the last one.

    Uses composite Simpson on a ``refine``-fold subdivision of the uniform
    grid (``refine`` must be even), accumulated from the top.
    """
    if refine % 2 or refine < 2:
        raise ValueError("refine must be a positive even integer")
    n = grid.size
    fine = np.linspace(grid[0], grid[-1], (n - 1) * refine + 1)
    g = np.asarray(integrand(fine), dtype=float)
    h = fine[1] - fine[0]
    pair = h / 3.0 * (g[0:-2:2] + 4.0 * g[1:-1:2] + g[2::2])
    cum = np.concatenate([[0.0], np.cumsum(pair)])
    total = cum[-1]
    # Grid node i sits at fine index i*refine, i.e. pair index i*refine/2.
    idx = np.arange(n) * (refine // 2)
    return total - cum[idx]


@dataclass(frozen=True, eq=False)
class BidTable:
    """Memoized markup tables for the simulator's hot loop.

    Interpolates standalone and bundle markups on uniform grids; the exact
    quadrature path remains available through the module-level functions.
    """

    config: MarketConfig
    cost_grid: np.ndarray
    cost_markup: np.ndarray
    bundle_grid: np.ndarray
    bundle_markup_values: np.ndarray

    @classmethod
    def build(cls, config: MarketConfig, n_points: int = 1024, refine: int = 16) -> "BidTable":
        dist = config.dist
        bundle = config.bundle_dist
        if bundle is None:
            raise DomainError("bid tables require a config with a bundled-cost law")
        exponent = config.n_bidders - 1

        c_grid = np.linspace(dist.lower, dist.upper, n_points)
        tails = _tail_integral_table(
            c_grid, lambda t: np.asarray(dist.survival(t)) ** exponent, refine
        )
        denom = np.asarray(dist.survival(c_grid)) ** exponent
        c_markup = np.where(denom < SURVIVAL_FLOOR, 0.0, tails / np.maximum(denom, SURVIVAL_FLOOR))

        p_grid = np.linspace(bundle.lower, bundle.upper, n_points)
        p_tails = _tail_integral_table(
            p_grid, lambda t: np.asarray(bundle.survival(t)) ** exponent, refine
        )
        p_denom = np.asarray(bundle.survival(p_grid)) ** exponent
        p_markup = np.where(
            p_denom < SURVIVAL_FLOOR, 0.0, p_tails / np.maximum(p_denom, SURVIVAL_FLOOR)
        )

        for arr in (c_grid, c_markup, p_grid, p_markup):
            arr.setflags(write=False)
        return cls(
            config=config,
            cost_grid=c_grid,
            cost_markup=c_markup,
            bundle_grid=p_grid,
            bundle_markup_values=p_markup,
        )

    def standalone_markup(self, c):
        return np.interp(c, self.cost_grid, self.cost_markup)

    def bundle_markup(self, phi):
        return np.interp(phi, self.bundle_grid, self.bundle_markup_values)
