import os
import re
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


# one PASS/FAIL line per acceptance criterion, grouped by the test_cNN_ prefix
_CRITERIA = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)_(\w+?)(\[|$)", report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    ok = _CRITERIA.get(key, (True, m.group(2)))[0]
    if report.failed or (report.when == "call" and report.skipped):
        ok = False
    _CRITERIA[key] = (ok, m.group(2))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        ok, name = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if ok else 'FAIL'}  "
                                    f"{name.replace('_', ' ')}")
