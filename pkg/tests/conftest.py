import pytest

from bgvlab.params import ParamRequest, plan
from bgvlab.scheme import keygen


@pytest.fixture(scope="session")
def small_plan():
    return plan(ParamRequest(n=256, M=2))


@pytest.fixture(scope="session")
def small_params(small_plan):
    return small_plan.scheme_params(seed=1)


@pytest.fixture(scope="session")
def small_key(small_params):
    return keygen(small_params, seed=1, lab_mode=True)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
