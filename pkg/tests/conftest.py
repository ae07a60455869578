import functools

import numpy as np
import pytest

from phscond import verify
from phscond.geometry import GeometrySpec, generate
from phscond.manufactured import make_case


@functools.lru_cache(maxsize=None)
def points(shape: str, dr: float, seed: int = 0):
    return generate(GeometrySpec(shape, dr), seed)


@functools.lru_cache(maxsize=None)
def discretized(shape: str, dr: float, p: int, mode: str = "multidomain"):
    ps = points(shape, dr)
    return ps, verify.discretize(ps, p, mode)


@pytest.fixture(scope="session")
def circle_ps():
    """Circle-in-square set at the coarsest study spacing (~1.5k points)."""
    return points("circle_in_square", 0.052)


@pytest.fixture(scope="session")
def circle_case():
    return make_case("circle_in_square", 10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
