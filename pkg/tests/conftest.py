import numpy as np
import pytest

from mtebounds import dgp_factory, population_moments


@pytest.fixture(scope="session")
def moments_cache():
    """Population moments per design, computed once per test session."""
    cache = {}

    def get(model: str, v_dim: int, sigma: float):
        key = (model, v_dim, sigma)
        if key not in cache:
            cache[key] = population_moments(dgp_factory(model, v_dim, sigma))
        return cache[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)
