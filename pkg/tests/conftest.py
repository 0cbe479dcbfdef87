import time

import pytest

from crossing_lab import VehicleParams
from crossing_lab.campaign import DoePlan, run_campaign, save_campaign

WR = VehicleParams().wheel_radius

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "failed": 0, "passed": 0,
                                          "skipped": 0, "seconds": 0.0})
    if report.when == "call":
        entry["seconds"] += report.duration
    if report.failed:
        entry["failed"] += 1
    elif report.skipped:
        entry["skipped"] += 1
    elif report.when == "call":
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "FAIL" if e["failed"] else ("PASS" if e["passed"] else "SKIP")
        note = f", {e['skipped']} check(s) skipped" if e["skipped"] and e["passed"] else ""
        terminalreporter.write_line(f"criterion {number:2d}  {status}  {e['title']} "
                                    f"({e['seconds']:.1f} s{note})")


@pytest.fixture(scope="session")
def default_campaign(tmp_path_factory):
    """The 125-trial default campaign, run once per session on one worker."""
    start = time.perf_counter()
    result = run_campaign(DoePlan.default(WR), workers=1)
    elapsed = time.perf_counter() - start
    path = tmp_path_factory.mktemp("campaign") / "campaign.csv"
    save_campaign(result, path, WR)
    return {"result": result, "path": path, "seconds": elapsed}
