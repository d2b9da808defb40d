"""Shared pytest plumbing: acceptance verdicts in the terminal summary.

Pytest captures stdout at the file-descriptor level, so per-criterion
verdict lines printed inside passing tests would be discarded.  The
acceptance tests record their lines here instead, and the hook prints them
after capture ends so every run log shows one pass/fail line per criterion.
"""

_ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
