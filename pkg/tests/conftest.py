from __future__ import annotations

import pytest

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    def rec(number: int, ok: bool, detail: str):
        ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return rec


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
