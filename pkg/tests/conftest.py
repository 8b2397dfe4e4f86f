import pytest

# Acceptance outcomes, filled in by tests/test_acceptance.py and printed at the end of the run.
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def report():
    def record(number: int, passed: bool, detail: str) -> bool:
        CRITERIA[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
