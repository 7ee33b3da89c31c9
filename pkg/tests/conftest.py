import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record (and print) the one-line verdict of an acceptance criterion."""

    def record(number: int, status: str, detail: str):
        line = f"criterion {number:>2}: {status:<13} {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return status == "PASS"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
