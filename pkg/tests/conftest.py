import sys
from pathlib import Path

import pytest

# lets test modules import the shared loop oracles as ``_oracles``
sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance line, then assert it."""
    def record(name: str, ok: bool, detail: str):
        line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print("\n" + line, flush=True)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
