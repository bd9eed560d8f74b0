"""Pytest hooks: the acceptance-criteria summary printed after each run."""

from testkit import ACCEPTANCE_CRITERIA


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(key, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::" in nodeid:
                name = nodeid.split("::")[-1].split("[")[0]
                if key != "passed":
                    outcomes[name] = "FAIL"
                else:
                    outcomes.setdefault(name, "PASS")
    lines = [
        f"[{outcomes[name]}] {label}" for name, label in ACCEPTANCE_CRITERIA if name in outcomes
    ]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
