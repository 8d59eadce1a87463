import numpy as np
import pytest

from arqos.arrival import ArrivalParams
from arqos.channel import ChannelParams
from arqos.snc import QosTarget, solve_theta_star


@pytest.fixture(scope="session")
def arr():
    return ArrivalParams.from_fps(120)


@pytest.fixture(scope="session")
def target():
    return QosTarget(20.0, 1e-3)


@pytest.fixture(scope="session")
def q_star(arr, target):
    return solve_theta_star(arr, target)


@pytest.fixture(scope="session")
def chan_ul():
    return ChannelParams.from_db(52, 10.0)


@pytest.fixture(scope="session")
def chan_dl():
    return ChannelParams.from_db(133, 10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
