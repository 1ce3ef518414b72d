import pytest

_CRITERIA = []


@pytest.fixture(scope="session")
def record_criterion():
    """Log one PASS/FAIL line per acceptance criterion and return the flag."""

    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
