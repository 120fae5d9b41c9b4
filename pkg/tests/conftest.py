from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"

_CRITERIA = {}


@pytest.fixture
def toy3():
    return DATA / "toy3"


@pytest.fixture
def toy6():
    return DATA / "toy6"


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _CRITERIA.setdefault(marker, []).append((report.nodeid, report.outcome,
                                                 getattr(report, "skip_reason", "")))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = mark.args[0]
        if report.skipped and isinstance(report.longrepr, tuple):
            report.skip_reason = report.longrepr[2].removeprefix("Skipped: ")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        outcomes = [o for _, o, _ in _CRITERIA[n]]
        if any(o == "failed" for o in outcomes):
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            reasons = {r for _, o, r in _CRITERIA[n] if r}
            verdict = "SKIPPED, " + "; ".join(sorted(reasons))
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {n}: {verdict} ({len(outcomes)} checks)")
