import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the acceptance report."""

    def record(number: int, ok: bool, detail: str) -> bool:
        VERDICTS.append(f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
