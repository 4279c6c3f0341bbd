"""Shared pytest plumbing.

Tests in test_acceptance.py are the release gate; the terminal summary
prints one PASS/FAIL line per criterion so a run can be audited at a glance.
"""

from __future__ import annotations

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[-1]
    if report.when == "call":
        _ACCEPTANCE_RESULTS.append((name, "PASS" if report.passed else "FAIL"))
    elif report.when == "setup" and (report.failed or report.skipped):
        _ACCEPTANCE_RESULTS.append((name, "FAIL" if report.failed else "SKIP"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status}  {name}")
