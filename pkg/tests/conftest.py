import numpy as np
import pytest

from qsd3 import BathSpec, basis_state, projector, three_level_system

# the two published parameter regimes (omega, a, gamma, Omega)
STRONG_MEMORY = dict(omega=1.0, a=0.8, gamma=0.05, Omega=0.0)
MODERATE_MEMORY = dict(omega=1.0, a=0.2, gamma=0.2, Omega=0.0)


def make_setup(params):
    system = three_level_system(params["omega"])
    bath = BathSpec(a=params["a"], gamma=params["gamma"], Omega=params["Omega"])
    return system, bath


@pytest.fixture(scope="session")
def strong_setup():
    return make_setup(STRONG_MEMORY)


@pytest.fixture(scope="session")
def moderate_setup():
    return make_setup(MODERATE_MEMORY)


@pytest.fixture(scope="session")
def excited_state():
    return basis_state(2)


@pytest.fixture(scope="session")
def excited_density():
    return projector(basis_state(2))


def rel_err(x, y):
    return np.abs(x - y) / np.maximum(np.abs(y), 1e-300)
