import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wbcog.channels import generate_channel_set, sample_positions
from wbcog.config import Scenario

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@pytest.fixture
def scenario():
    return Scenario(D=1000)


def table1_channels(sc, seed):
    users, targets = sample_positions(sc, np.random.default_rng(seed))
    return generate_channel_set(sc, users, targets, seed)


# PASS/FAIL lines collected by tests/test_acceptance.py
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
