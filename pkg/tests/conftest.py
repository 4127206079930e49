import pytest

# filled by tests/test_acceptance.py: (criterion number, status, detail)
ACCEPTANCE_LINES: list[tuple[int, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number:>2}: {status:<4} {detail}")


@pytest.fixture
def acceptance():
    def record(number: int, ok: bool | None, detail: str) -> None:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        ACCEPTANCE_LINES.append((number, status, detail))
        print(f"criterion {number}: {status} {detail}")

    return record
