import numpy as np
import pytest

from exseq.refsimplex import make_reference_cell


@pytest.fixture(scope="session")
def rc3():
    return make_reference_cell(3)


@pytest.fixture(scope="session")
def rc2():
    return make_reference_cell(2)


@pytest.fixture(scope="session")
def rc1():
    return make_reference_cell(1)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
