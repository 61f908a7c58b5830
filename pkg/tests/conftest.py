import pytest

_ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Register ``(number, passed, detail)`` for the acceptance summary."""
    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
