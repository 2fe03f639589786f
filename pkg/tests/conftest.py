import numpy as np
import pytest

from wellescape import experiments as ex
from wellescape.dynamics import ZeroForcing


@pytest.fixture(scope="session")
def quasi_pair():
    return ex.hyperbolic_pair(ex.quasi_forcing_2dof())


@pytest.fixture(scope="session")
def quasi_samples(quasi_pair):
    return ex.stable_samples(quasi_pair, threads=4)


@pytest.fixture(scope="session")
def unforced_pair():
    return ex.hyperbolic_pair(ZeroForcing(4))


@pytest.fixture(scope="session")
def unforced_samples(unforced_pair):
    return ex.stable_samples(unforced_pair, threads=4)


@pytest.fixture(scope="session")
def saddle_k1():
    return ex.hyperbolic_1dof(1.0)


@pytest.fixture(scope="session")
def quasi_dividing(quasi_pair):
    return ex.dividing_pair(quasi_pair, t_end=3.0, threads=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
