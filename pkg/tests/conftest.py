import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record a criterion outcome, then assert it so pytest reports the same result."""

    def record(number: int, ok: bool, detail: str) -> None:
        _VERDICTS[number] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        ok, detail = _VERDICTS[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}")
