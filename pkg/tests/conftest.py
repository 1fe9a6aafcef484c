import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pass_isac import SystemConfig
from pass_isac.experiments import sample_scenario

settings.register_profile("pkg", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def scenario(cfg):
    return sample_scenario(cfg, 1)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
