import os
import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if "test_acceptance.py::test_criterion_" in report.nodeid:
            num = int(report.nodeid.split("test_criterion_")[1][:2])
            ok = report.outcome == "passed"
            _CRITERIA[num] = _CRITERIA.get(num, True) and ok


_CRITERIA: dict[int, bool] = {}


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        if num in _CRITERIA:
            status = "PASS" if _CRITERIA[num] else "FAIL"
            terminalreporter.write_line(f"criterion {num:2d}: {status}  {CRITERIA[num]}")
