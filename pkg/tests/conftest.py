import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import CRITERIA

    outcome = {}
    for status in ("passed", "failed", "skipped", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            # a failure in any phase wins over a passed call
            if outcome.get(name) != "FAIL":
                outcome[name] = {"passed": "PASS", "skipped": "SKIP"}.get(status, "FAIL")
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for name, text in CRITERIA.items():
        if name in outcome:
            terminalreporter.write_line(f"{outcome[name]:4s}  {text}")
