from __future__ import annotations

import pytest

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 10


@pytest.fixture
def acceptance():
    def record(criterion: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
