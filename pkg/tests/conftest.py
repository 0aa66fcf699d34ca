"""Per-criterion pass/fail lines for the acceptance suite."""

_RESULTS: dict[str, tuple[str, float]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.failed:
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        prev = _RESULTS.get(name)
        if prev is None or prev[0] == "PASS":
            _RESULTS[name] = (outcome, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (outcome, dur) in sorted(_RESULTS.items()):
        terminalreporter.write_line(f"{outcome}  {name}  ({dur:.1f}s)")
