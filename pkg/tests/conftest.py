import numpy as np
import pytest

from kph import observables, ph_model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pend():
    return ph_model.pendulum(0.3)


@pytest.fixture
def pend_dict():
    return observables.pendulum_dictionary()


@pytest.fixture
def oscillator_ph():
    """Pendulum-like linear pH system: J = [[0,1],[-1,0]], R = diag(0, 0.3), G = e2, Q = I."""
    return ph_model.LinearPHSystem(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.diag([0.0, 0.3]),
                                   np.array([[0.0], [1.0]]), np.eye(2))
