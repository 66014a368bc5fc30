import pytest
import torch

# one intra-op thread keeps float reductions reproducible run to run
torch.set_num_threads(1)

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_itemcollected(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        number, title = mark.args
        _CRITERIA.setdefault(number, {"title": title, "outcomes": []})
        item.keywords[f"criterion_{number}"] = True


def pytest_runtest_logreport(report):
    # setup failures count; teardown does not
    if report.when == "teardown" or (report.when == "setup" and report.passed):
        return
    for number, entry in _CRITERIA.items():
        if f"criterion_{number}" in report.keywords:
            entry["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif "failed" in outcomes:
            status = "FAIL"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"criterion {number:>2} {status:<7} {entry['title']}")
