"""Shared pytest hooks.

Collects the outcome of each numbered criterion in test_acceptance.py and
prints one PASS/FAIL line per criterion at the end of the run, so the
verdicts are readable without scanning the full test listing.
"""

_verdicts: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call":
        _verdicts[name] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _verdicts[name] = report.outcome  # fixture error or skip


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_verdicts):
        tag = name.removeprefix("test_criterion_")
        num, _, title = tag.partition("_")
        verdict = "PASS" if _verdicts[name] == "passed" else "FAIL"
        terminalreporter.write_line(
            f"criterion {num} {title.replace('_', ' ')}: {verdict}")
