import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from commest.core import SharedRandomness

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def randomness():
    return SharedRandomness(12345)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
