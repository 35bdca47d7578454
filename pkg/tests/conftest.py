import io

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def lines(text: str) -> io.StringIO:
    return io.StringIO(text)


@pytest.fixture
def small_kb():
    from kbmap.synthetic import planted_kb

    return planted_kb(n_entities=40, n_communities=4, seed=1)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
