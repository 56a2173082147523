"""Collects acceptance-criterion outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_results: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    report = outcome.get_result()
    number, title = int(mark.args[0]), str(mark.args[1])
    entry = _results.setdefault(number, {"title": title, "failed": False, "passed": 0})
    if report.failed:
        entry["failed"] = True
    elif report.when == "call" and report.passed:
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        status = "FAIL" if entry["failed"] else ("PASS" if entry["passed"] else "SKIP")
        terminalreporter.write_line(f"AC{number:<3d}{status}  {entry['title']}")
