import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    def report(number: int, ok: bool, detail: str, seconds: float):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} [{seconds:.2f} s]"
        _LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance")
        for line in sorted(_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
