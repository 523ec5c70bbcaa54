from __future__ import annotations

import pytest

from mmpc.gf import DEFAULT_Q
from mmpc.model import DemandSet, RandomTape, build_library, relabel

#: Dependent rows of the worked five-message instance: d = a + b, e = b + c.
GOLDEN_ROWS = ((1, 1, 0), (0, 1, 1))


@pytest.fixture(scope="session")
def golden_lib():
    return build_library(5, 3, DEFAULT_Q, GOLDEN_ROWS)


@pytest.fixture(scope="session")
def golden_rlib(golden_lib):
    return relabel(golden_lib, DemandSet((1, 2)))


@pytest.fixture(scope="session")
def identity_tape():
    return RandomTape.identity(68)


#: One line per acceptance criterion, filled in by tests/test_acceptance.py.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
