import pytest

from bundleproc import make_truncated_exponential


@pytest.fixture(scope="session")
def cost_law():
    """The study's school-cost law: truncated exponential, mean 40 on [10, 100]."""
    return make_truncated_exponential(40.0, 10.0, 100.0)


@pytest.fixture(scope="session")
def unit_uniform():
    """Uniform law on [0, 1], via the zero-rate limit."""
    return make_truncated_exponential(0.5, 0.0, 1.0)
