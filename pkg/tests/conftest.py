import json
from pathlib import Path

import pytest

ORACLES = json.loads((Path(__file__).parent / "oracles" / "values.json").read_text())

# acceptance results collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def oracle():
    return ORACLES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
