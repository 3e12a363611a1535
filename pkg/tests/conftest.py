import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_sym(rng, size=None, scale=1.0):
    shape = (3, 3) if size is None else (size, 3, 3)
    a = scale * rng.standard_normal(shape)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def random_spd(rng, size=None):
    shape = (3, 3) if size is None else (size, 3, 3)
    m = rng.standard_normal(shape)
    return m @ np.swapaxes(m, -1, -2) + np.eye(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
