"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import pytest

_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not mark.args:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _results[number] = (title, rep.outcome, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, outcome, duration = _results[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title}  ({duration:.1f} s)")
