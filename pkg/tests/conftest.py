"""Shared test plumbing: a scorecard the acceptance gate writes one line per check."""

import pytest

_lines = []


@pytest.fixture
def scorecard():
    """Record one verdict line; all lines are echoed after the test summary."""
    def record(index: int, ok: bool, detail: str):
        line = f"gate {index}: {'PASS' if ok else 'FAIL'} - {detail}"
        _lines.append((index, line))
        print(line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _lines:
        terminalreporter.section("acceptance scorecard")
        for _, line in sorted(_lines):
            terminalreporter.write_line(line)
