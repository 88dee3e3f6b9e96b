from __future__ import annotations

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str, str]] = {}


def record(criterion: int, name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[criterion] = (passed, name, detail)
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {name} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        passed, name, detail = ACCEPTANCE_RESULTS[k]
        line = f"{'PASS' if passed else 'FAIL'}  {k}. {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
