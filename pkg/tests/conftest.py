import numpy as np
import pytest

from landaulab.calculus import VelocityGrid
from landaulab.cli import operators
from landaulab.collision import Collision


@pytest.fixture(scope="session")
def ops0():
    """Lab-grid operators at gamma = 0 (N=12, V=6), shared by the whole session."""
    return operators(0.0, 6.0, 12)


@pytest.fixture(scope="session")
def small_coll():
    """Coarse collision operator for cheap structural tests."""
    return Collision(VelocityGrid(5.0, 10, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
