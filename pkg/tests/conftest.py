"""Shared pytest hooks: acceptance verdicts are repeated at the end of the run."""

ACCEPTANCE = {}  # criterion number -> (title, passed, detail)


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, passed, detail)
    print(f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}: {title} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{number}. {'PASS' if passed else 'FAIL'}  {title}  {detail}".rstrip())
