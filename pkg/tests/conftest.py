import numpy as np
import pytest

from rotsparse import BasisSpec
from rotsparse.coding import basis_for


@pytest.fixture(scope="session")
def basis7():
    return basis_for(BasisSpec(7))


@pytest.fixture(scope="session")
def basis11():
    return basis_for(BasisSpec(11))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)


def random_real_patch(basis, rng):
    return rng.standard_normal(basis.n_pixels)
