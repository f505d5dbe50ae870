import re

CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_outcomes = {}


def pytest_runtest_logreport(report):
    m = CRITERION.search(report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.when == "call":
        _outcomes[key] = ("PASS" if report.passed else "FAIL", report.duration)
    elif report.failed:
        _outcomes[key] = ("FAIL", report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), (status, secs) in sorted(_outcomes.items()):
        terminalreporter.write_line(f"criterion {num:2d} ({name}): {status} in {secs:.1f} s")
