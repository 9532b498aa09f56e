import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


# -- acceptance summary: one line per criterion ------------------------------------

import pytest

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "status": []})
    if hasattr(report, "wasxfail"):
        entry["status"].append(f"expected failure: {report.wasxfail}" if report.skipped else "unexpected pass")
    elif report.failed:
        entry["status"].append(f"{item.name} failed")
    elif report.skipped:
        entry["status"].append(f"{item.name} skipped")
    else:
        entry["status"].append(None)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        entry = _criteria[n]
        problems = [s for s in entry["status"] if s]
        verdict = "FAIL" if problems else "PASS"
        line = f"criterion {n:2d} {verdict}  {entry['title']}"
        if problems:
            line += "  (" + "; ".join(problems) + ")"
        terminalreporter.write_line(line)
