import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(passed, detail)``."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {request.node.name}: {detail}"
        print(line)
        lines.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
