import traceback

import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, fn)``: run ``fn() -> (ok, detail)``, record one line, assert ok."""

    def run(n, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a FAIL line, not a missing one
            ok, detail = False, f"{type(exc).__name__}: {exc}"
            traceback.print_exc()
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[n] = line
        print(line)
        assert ok, line

    return run


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
