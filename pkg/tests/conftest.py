import pathlib

import pytest

DATA = pathlib.Path(__file__).parent / "data"

# Lines appended by test_acceptance.py and echoed after the run.
ACCEPTANCE_LINES = []


@pytest.fixture
def data_dir():
    return DATA


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def study_report():
    """The full 10,000-replication gamma study with default settings."""
    from glmresid.simulate import SimConfig, run_simulation

    return run_simulation(SimConfig())
