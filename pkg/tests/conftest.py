import logging

import pytest

from rdetc.harness import SimConfig, cached_design, prepare, run_simulation
from rdetc.kernels import PAPER_PARAMS

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def paper_design():
    return cached_design(PAPER_PARAMS, 162)


@pytest.fixture(scope="session")
def paper_controller(paper_design):
    logging.getLogger("rdetc").setLevel(logging.ERROR)
    return prepare(SimConfig(), kernels=paper_design)


@pytest.fixture(scope="session")
def paper_run(paper_controller):
    """Event-triggered run of the published configuration over 150 s (eta = 1)."""
    return run_simulation(SimConfig(), controller=paper_controller)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
