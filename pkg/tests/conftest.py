import time
from contextlib import contextmanager

import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


class Criterion:
    def __init__(self):
        self.failures: list[str] = []
        self.notes: list[str] = []

    def check(self, ok, message: str) -> None:
        (self.notes if ok else self.failures).append(message)


@pytest.fixture
def acceptance():
    """Context manager that times one criterion, records a PASS/FAIL line and
    fails the test on any broken check or an exceeded runtime budget."""

    @contextmanager
    def run(number: int, title: str, budget: float):
        crit = Criterion()
        start = time.perf_counter()
        try:
            yield crit
        except Exception as exc:  # reported through pytest.fail below
            crit.failures.append(f"{type(exc).__name__}: {exc}")
        elapsed = time.perf_counter() - start
        crit.check(elapsed < budget, f"runtime {elapsed:.2f}s (budget {budget:g}s)")
        status = "FAIL" if crit.failures else "PASS"
        detail = "; ".join(crit.failures + crit.notes)
        line = f"criterion {number:2d} {status} {title} [{elapsed:.2f}s] {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        if crit.failures:
            pytest.fail(line, pytrace=False)

    return run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
