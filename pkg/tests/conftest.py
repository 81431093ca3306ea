import re

_ACCEPTANCE_RESULTS: dict = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    m = re.search(r"test_acceptance\.py::.*test_criterion_(\d+)_(\w+)", report.nodeid)
    if m:
        key = (int(m.group(1)), m.group(2))
        _ACCEPTANCE_RESULTS[key] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for (num, name), outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:02d} ({name.replace('_', ' ')}): {status}")
