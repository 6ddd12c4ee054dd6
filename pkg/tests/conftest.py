"""Shared test fixtures and reporting hooks.

The acceptance gate (test_acceptance.py) records one verdict line per
criterion in ``acceptance_verdicts``; the terminal-summary hook below
replays them after the run so they are visible in plain ``pytest -v``
output, where per-test stdout is captured.
"""

# Appended to by tests.test_acceptance.verdict(); ordered by execution.
acceptance_verdicts = []


def pytest_terminal_summary(terminalreporter):
    if not acceptance_verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_verdicts:
        terminalreporter.write_line(line)
