import pytest

_VERDICTS: dict[str, str] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict("3", ok, "detail")``."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})"
        _VERDICTS[criterion] = line
        print(line)
        return ok

    return record


def _order(key: str):
    num = "".join(ch for ch in key if ch.isdigit())
    return int(num or 0), key


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=_order):
        terminalreporter.write_line(_VERDICTS[key])
