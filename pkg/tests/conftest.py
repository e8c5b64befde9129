import numpy as np
import pytest


def random_spd(rng, n, floor=0.5):
    b = rng.standard_normal((n, n))
    return b @ b.T + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
