import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# (criterion number, title, passed, detail) gathered by test_acceptance.py
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def report(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE.append((number, title, passed, detail))
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(
            f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}  {detail}")


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(12345)
