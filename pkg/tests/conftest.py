import pytest

_VERDICTS: list = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and return the flag."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        _VERDICTS.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
