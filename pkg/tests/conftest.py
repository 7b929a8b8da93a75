import numpy as np
import pytest

from qbath.bath_models import ThermalParams, build_bath, load_preset, thermal_state


def _built(name, beta=1.0, **params):
    bath = build_bath(load_preset(name, **params))
    return bath, thermal_state(bath.hamiltonian, ThermalParams(beta))


@pytest.fixture
def p1():
    """Single spin, pure dephasing, g = omega = beta = 1"""
    return _built("P1")


@pytest.fixture
def p1_tilted():
    return _built("P1", tilt=np.pi / 4)


@pytest.fixture
def p2():
    return _built("P2", beta=0.7)


@pytest.fixture
def p3():
    return _built("P3", beta=0.5, g=0.5)


@pytest.fixture
def zero_bath():
    return _built("zero")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
