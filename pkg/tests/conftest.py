import pytest

# one line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA_LINES = {}


@pytest.fixture
def report_criterion():
    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        CRITERIA_LINES[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[number])
