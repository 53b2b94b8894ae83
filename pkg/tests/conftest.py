import pytest

_VERDICTS: list[tuple[str, str, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then fail the test if the criterion did not hold."""

    def record(criterion: str, ok: bool, detail: str = "") -> None:
        _VERDICTS.append(("PASS" if ok else "FAIL", criterion, detail))
        assert ok, f"{criterion}: {detail}"

    record.skip = lambda criterion, reason: (_VERDICTS.append(("SKIP", criterion, reason)),
                                             pytest.skip(reason))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for status, criterion, detail in _VERDICTS:
        terminalreporter.write_line(f"{status}  {criterion}" + (f"  [{detail}]" if detail else ""))
