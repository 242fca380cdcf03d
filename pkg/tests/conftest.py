import sys

import pytest

from byteshap.coverage import CoverageMap
from byteshap.targets import ExecutionResult


class ScriptedTarget:
    """Edges are a pure function of the bytes, given as a Python callable; counts calls."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, data: bytes) -> ExecutionResult:
        self.calls += 1
        return ExecutionResult(frozenset(self.fn(data)))


@pytest.fixture
def empty_map():
    return CoverageMap()


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.summary_lines():
        terminalreporter.write_line(line)
