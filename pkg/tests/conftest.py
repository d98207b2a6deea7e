from __future__ import annotations

# acceptance tests append (criterion, passed, detail) here
CRITERIA: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(CRITERIA, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
