import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from zrp import ThermoTable, e1_rate, linear_rate, queue_rate

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def linear_thermo():
    return ThermoTable(linear_rate())


@pytest.fixture(scope="session")
def e1_thermo():
    return ThermoTable(e1_rate())


@pytest.fixture(scope="session")
def queue_thermo():
    return ThermoTable(queue_rate())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion."""

    def record(criterion: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
