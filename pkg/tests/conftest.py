import pytest

_verdicts = {}


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion."""
    def record(name, ok, detail):
        _verdicts[name] = (ok, detail)
        print(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_verdicts):
        ok, detail = _verdicts[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")
