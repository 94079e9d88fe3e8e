"""Cost-distribution primitives.

School-level costs follow an exponential law truncated to a bounded support,
parameterized by the mean of the truncated law. The bundled-cost law (sum of
two iid school costs minus a deterministic synergy) is built by numerical
convolution on a grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NumericError

# |rate| below this is treated as the exact uniform limit, avoiding 0/0 in the
# truncated-exponential formulas.
UNIFORM_RATE_EPS = 1e-12

ROOT_MAX_ITER = 200


def _mean_shape(x: np.ndarray) -> np.ndarray:
    """h(x) = 1/x - 1/(e^x - 1), the truncated-mean shape function.

    h(0) = 1/2 is a removable singularity; a short series keeps full
    precision for small |x|.
    """
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    direct = 1.0 / xs - 1.0 / np.expm1(xs)
    series = 0.5 - x / 12.0 + x**3 / 720.0
    return np.where(small, series, direct)


@dataclass(frozen=True)
class CostDistribution:
    """Exponential law truncated to ``[lower, upper]``.

    ``rate == 0.0`` encodes the exact uniform limit. ``target_mean`` records
    the truncated mean the rate was solved for, when the distribution was
    built that way (``None`` otherwise).
    """

    rate: float
    lower: float
    upper: float
    target_mean: float | None = None

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise DomainError(
                f"need lower < upper, got [{self.lower}, {self.upper}]"
            )
        if not np.isfinite(self.rate):
            raise DomainError(f"rate must be finite, got {self.rate}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def _is_uniform(self) -> bool:
        return abs(self.rate) < UNIFORM_RATE_EPS

    def cdf(self, c):
        """P(cost <= c); 0 below the support and 1 above it."""
        c = np.asarray(c, dtype=float)
        z = np.clip((c - self.lower) / self.width, 0.0, 1.0)
        if self._is_uniform():
            out = z
        else:
            out = np.expm1(-self.rate * z * self.width) / np.expm1(
                -self.rate * self.width
            )
        return out if out.ndim else float(out)

    def survival(self, c):
        out = 1.0 - np.asarray(self.cdf(c))
        return out if out.ndim else float(out)

    def pdf(self, c):
        """Density; strictly positive inside the support, 0 outside."""
        c = np.asarray(c, dtype=float)
        inside = (c >= self.lower) & (c <= self.upper)
        if self._is_uniform():
            vals = np.full_like(c, 1.0 / self.width)
        else:
            vals = (
                self.rate
                * np.exp(-self.rate * (c - self.lower))
                / -np.expm1(-self.rate * self.width)
            )
        out = np.where(inside, vals, 0.0)
        return out if out.ndim else float(out)

    def quantile(self, u):
        """Inverse cdf on [0, 1]."""
        u = np.asarray(u, dtype=float)
        if np.any((u < 0.0) | (u > 1.0)):
            raise DomainError("quantile argument must lie in [0, 1]")
        if self._is_uniform():
            out = self.lower + u * self.width
        else:
            out = self.lower - np.log1p(u * np.expm1(-self.rate * self.width)) / self.rate
        out = np.clip(out, self.lower, self.upper)
        out = np.where(u >= 1.0, self.upper, np.where(u <= 0.0, self.lower, out))
        return out if out.ndim else float(out)

    def mean(self) -> float:
        """Mean of the truncated law, in closed form."""
        if self._is_uniform():
            return self.lower + 0.5 * self.width
        return self.lower + self.width * float(_mean_shape(self.rate * self.width))

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-cdf sampling; deterministic given the generator state."""
        return self.quantile(rng.random(size))


def make_truncated_exponential(
    target_mean: float,
    lower: float,
    upper: float,
    *,
    rate_from_mean: bool = False,
) -> CostDistribution:
    """Build the truncated exponential cost law.

    By default the rate is solved (bracketed root-finding) so that the mean
    of the *truncated* law equals ``target_mean``. With ``rate_from_mean``
    the rate is instead set to ``1/target_mean`` (the raw exponential mean)
    and the law is then truncated, so its truncated mean differs from
    ``target_mean``; in that mode ``target_mean`` is not recorded.
    """
    if not lower < upper:
        raise DomainError(f"need lower < upper, got [{lower}, {upper}]")
    if not lower < target_mean < upper:
        raise DomainError(
            f"target mean {target_mean} outside open support ({lower}, {upper})"
        )
    if rate_from_mean:
        if target_mean <= 0:
            raise DomainError("rate_from_mean requires a positive mean")
        return CostDistribution(1.0 / target_mean, lower, upper, target_mean=None)

    width = upper - lower
    mid = lower + 0.5 * width
    if abs(target_mean - mid) < 1e-12 * width:
        return CostDistribution(0.0, lower, upper, target_mean=target_mean)

    def gap(rate: float) -> float:
        if abs(rate) < UNIFORM_RATE_EPS:
            return mid - target_mean
        return lower + width * float(_mean_shape(rate * width)) - target_mean

    # The truncated mean decreases from `upper` to `lower` as the rate runs
    # from -inf to +inf; expand a bracket until it straddles the target.
    lo_rate, hi_rate = -1.0 / width, 1.0 / width
    for _ in range(200):
        if gap(lo_rate) > 0.0 > gap(hi_rate):
            break
        if gap(lo_rate) <= 0.0:
            lo_rate *= 2.0
        if gap(hi_rate) >= 0.0:
            hi_rate *= 2.0
    else:
        raise NumericError("could not bracket the rate for the target mean")

    try:
        rate = brentq(
            gap, lo_rate, hi_rate, xtol=1e-14, rtol=8.9e-16, maxiter=ROOT_MAX_ITER
        )
    except RuntimeError as exc:  # brentq non-convergence
        raise NumericError(f"rate solve failed: {exc}") from exc
    return CostDistribution(float(rate), lower, upper, target_mean=target_mean)


@dataclass(frozen=True, eq=False)
class BundleCostDistribution:
    """Grid-based law of the bundled cost c1 + c2 - gamma for iid school costs.

    The cdf is stored on a uniform grid and evaluated by linear
    interpolation; values are clamped to [0, 1] and nondecreasing.
    """

    support: np.ndarray
    cdf_values: np.ndarray
    gamma: float
    lower: float
    upper: float
    source: CostDistribution

    def __post_init__(self) -> None:
        support = np.asarray(self.support, dtype=float)
        cdfv = np.asarray(self.cdf_values, dtype=float)
        if support.shape != cdfv.shape or support.ndim != 1:
            raise DomainError("support and cdf grids must be 1-d and congruent")
        if np.any(np.diff(support) <= 0):
            raise DomainError("support grid must be strictly increasing")
        if np.any(np.diff(cdfv) < 0) or cdfv[0] < -1e-6 or cdfv[-1] > 1 + 1e-6:
            raise DomainError("cdf grid must be nondecreasing within [0, 1]")
        if abs(cdfv[0]) > 1e-6 or abs(cdfv[-1] - 1.0) > 1e-6:
            raise DomainError("cdf grid must run from 0 to 1 within tolerance")
        support.setflags(write=False)
        cdfv.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "cdf_values", cdfv)

    @property
    def grid(self) -> np.ndarray:
        """(value, cdf) pairs as an (n, 2) array."""
        return np.column_stack([self.support, self.cdf_values])

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.support, self.cdf_values, left=0.0, right=1.0)
        return out if out.ndim else float(out)

    def survival(self, x):
        out = 1.0 - np.asarray(self.cdf(x))
        return out if out.ndim else float(out)

    def mean(self) -> float:
        """Grid mean via the survival identity E[X] = lower + int (1 - F)."""
        return self.lower + float(
            np.trapezoid(1.0 - self.cdf_values, self.support)
        )


def convolve_bundle(
    dist: CostDistribution, gamma: float, grid_size: int = 2048
) -> BundleCostDistribution:
    """Bundled-cost law by quadrature of P(c1 + c2 <= x + gamma).

    The cdf is evaluated on a uniform ``grid_size``-point grid over
    ``[2*lower - gamma, 2*upper - gamma]`` with a composite-Simpson inner
    quadrature, then clamped and monotone-rearranged.
    """
    if not 0.0 <= gamma <= 2.0 * dist.lower:
        raise DomainError(
            f"gamma must lie in [0, {2.0 * dist.lower}], got {gamma}"
        )
    if grid_size < 256:
        raise DomainError(f"grid_size must be at least 256, got {grid_size}")

    lo = 2.0 * dist.lower - gamma
    hi = 2.0 * dist.upper - gamma
    xs = np.linspace(lo, hi, grid_size)

    n_quad = 4097  # odd, so composite Simpson applies exactly
    t = np.linspace(dist.lower, dist.upper, n_quad)
    weights = np.ones(n_quad)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= (t[1] - t[0]) / 3.0
    f_t = dist.pdf(t)

    cdf = (np.asarray(dist.cdf(xs[:, None] + gamma - t[None, :])) * (f_t * weights)).sum(
        axis=1
    )
    cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))
    cdf[0], cdf[-1] = 0.0, 1.0
    return BundleCostDistribution(
        support=xs,
        cdf_values=cdf,
        gamma=float(gamma),
        lower=lo,
        upper=hi,
        source=dist,
    )
