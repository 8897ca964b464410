import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# one (criterion, status, detail) entry per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[tuple[str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"{status:<7} {name}: {detail}")
