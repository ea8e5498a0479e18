import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def herm(rng, n, scale=1.0):
    a = crandn(rng, n, n)
    return scale * 0.5 * (a + a.conj().T)
