import re

import pytest

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")
_outcomes = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    failed = report.failed or (report.when == "call" and report.outcome != "passed")
    if report.when == "call" or failed:
        prev = _outcomes.get(key, (True, 0.0))
        _outcomes[key] = (prev[0] and not failed, prev[1] + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (n, name), (ok, secs) in sorted(_outcomes.items()):
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}  ({secs:.1f} s)")


@pytest.fixture
def within(request):
    """Assert that the test body finished inside its runtime budget (seconds)."""
    import time

    start = time.perf_counter()

    def check(budget):
        elapsed = time.perf_counter() - start
        assert elapsed < budget, f"took {elapsed:.1f} s, budget {budget} s"

    return check
