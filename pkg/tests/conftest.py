import pytest

_LINES = []


@pytest.fixture
def record():
    """Log one PASS/FAIL line per acceptance check; returns the verdict."""

    def _record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
