import numpy as np
import pytest

from lans2d import make_lattice


@pytest.fixture(scope="session")
def lat16():
    return make_lattice(16)


@pytest.fixture(scope="session")
def lat32():
    return make_lattice(32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
