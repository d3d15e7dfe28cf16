import pytest

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def record_criterion(number, title, passed, detail):
    ACCEPTANCE_RESULTS[number] = (title, bool(passed), detail)
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} -- {detail}"
    print(line)
    return line


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(
            f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} -- {detail}"
        )
