import numpy as np
import pytest

from surfeig.mesh import constant_density, make_icosphere, make_torus


@pytest.fixture(scope="session")
def ico2():
    return make_icosphere(2)


@pytest.fixture(scope="session")
def ico3():
    return make_icosphere(3)


@pytest.fixture(scope="session")
def ico4():
    return make_icosphere(4)


@pytest.fixture(scope="session")
def ico5():
    return make_icosphere(5)


@pytest.fixture(scope="session")
def torus128():
    return make_torus(2.0, 1.0, 128, 128)


@pytest.fixture(scope="session")
def ones4(ico4):
    return constant_density(ico4)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
