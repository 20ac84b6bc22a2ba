import re

import pytest

# Collected outcomes of the numbered acceptance tests, printed as a summary
# block at the end of the run (one pass/fail line per criterion).
_ACCEPTANCE = {}
_PATTERN = re.compile(r"test_criterion_(\d+)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or "test_acceptance" not in item.nodeid:
        return
    m = _PATTERN.search(item.name)
    if m:
        num = int(m.group(1))
        _ACCEPTANCE[num] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        terminalreporter.write_line(
            f"criterion {num:2d}: {_ACCEPTANCE[num]}"
        )
