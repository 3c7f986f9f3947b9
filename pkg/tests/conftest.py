import sys
from collections import defaultdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "cooling-limit anchors",
    2: "kinetic bound saturation",
    3: "occupation saturation",
    4: "direct feedback optimum",
    5: "random-draw inequality margins",
    6: "1/g scaling of the estimate covariance",
    7: "oracle equivalences",
    8: "identity checks",
    9: "Monte-Carlo validation",
}

_results = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _results[marker.args[0]].append((item.name, report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n, label in CRITERIA.items():
        runs = _results.get(n)
        if not runs:
            terminalreporter.write_line(f"criterion {n} ({label}): NOT RUN")
            continue
        failed = [name for name, ok in runs if not ok]
        status = "FAIL" if failed else "PASS"
        detail = f"  failing: {', '.join(failed)}" if failed else ""
        terminalreporter.write_line(f"criterion {n} ({label}): {status} [{len(runs)} checks]{detail}")
