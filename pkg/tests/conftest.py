import pytest

VERDICTS = []


@pytest.fixture
def verdict():
    """Record a criterion outcome and fail the test when it does not hold."""

    def record(label, ok, detail):
        VERDICTS.append((label, "PASS" if ok else "FAIL", detail))
        assert ok, f"{label}: {detail}"

    def skip(label, detail):
        VERDICTS.append((label, "SKIP", detail))
        pytest.skip(f"{label}: {detail}")

    record.skip = skip
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, detail in sorted(VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"{status} {label}: {detail}")
