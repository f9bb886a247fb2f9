"""Shared pytest hooks.

The acceptance tests record one verdict line per criterion; the hook below
prints them as a summary section at the end of the run, so the pass/fail
status of each criterion is visible even when per-test output is captured.
"""

_criterion_lines = []


def record_criterion(number: int, name: str, status: str, detail: str) -> None:
    _criterion_lines.append((number, f"criterion {number} ({name}): {status} [{detail}]"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_criterion_lines):
            terminalreporter.write_line(line)
