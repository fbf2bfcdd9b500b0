import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo acceptance verdict lines after capture ends, one per criterion."""
    module = sys.modules.get("test_acceptance") or sys.modules.get(
        "tests.test_acceptance"
    )
    verdicts = getattr(module, "VERDICTS", None) if module else None
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
