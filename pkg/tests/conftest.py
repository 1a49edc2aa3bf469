import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from mflab.space import FiniteSpace

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def spaces(draw, d_min=1, d_max=6):
    d = draw(st.integers(d_min, d_max))
    nu = draw(st.lists(st.floats(0.2, 5.0), min_size=d, max_size=d))
    return FiniteSpace(np.array(nu))


@st.composite
def seeds(draw):
    return draw(st.integers(0, 2**32 - 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def two_state():
    """Two-atom model shared by several tests."""
    from mflab.kernels import RateGenerator
    from mflab.models import TwoThreeBodyKernel

    sp = FiniteSpace(np.array([0.8, 1.2]))
    g = RateGenerator.from_rates(sp, [[0, 0.5], [0.3, 0]])
    g1 = np.zeros((2, 2, 2))
    g1[0, 0, 1], g1[0, 1, 1], g1[1, 0, 0], g1[1, 1, 0] = 0.2, 1.5, 1.0, 0.1
    kern = TwoThreeBodyKernel(sp, g1)
    rho = np.array([0.3, 0.7]) / sp.nu
    return sp, g, kern, rho
