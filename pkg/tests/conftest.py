import pytest

from streamprof import LimitGrid, RuntimeModel


@pytest.fixture
def grid():
    return LimitGrid(0.1, 4.0, 0.1)


@pytest.fixture
def truth():
    return RuntimeModel(tier=5, a=0.5, b=1.2, c=0.05, d=1.0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
