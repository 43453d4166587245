import numpy as np
import pytest

from ocsc import ConstraintGrid, integrate_forward, lq_discrete_optimum, lq_problem


@pytest.fixture(scope="session")
def lq():
    return lq_problem()


@pytest.fixture(scope="session")
def grid10():
    return ConstraintGrid.uniform(10, 1.0)


@pytest.fixture(scope="session")
def pair10(lq, grid10):
    control = lq_discrete_optimum(10).control()
    return control, integrate_forward(lq, control, knots=grid10.times)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
