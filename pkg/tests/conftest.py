import math

import pytest
from hypothesis import HealthCheck, settings

from swingguard.netmodel import steady_state, wscc9
from swingguard.scenarios import bundled
from swingguard.simulator import AnalyticSmib

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def smib():
    return AnalyticSmib()


@pytest.fixture(scope="session")
def wscc9_scenario():
    return bundled("wscc9")


@pytest.fixture(scope="session")
def smib_scenario():
    return bundled("smib")


@pytest.fixture(scope="session")
def wscc9_ss():
    return steady_state(wscc9(damping=1.0))


def deg(x):
    return math.radians(x)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance_lines(request):
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
