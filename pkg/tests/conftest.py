import pytest

# (criterion number, title, passed, detail) appended by the acceptance tests
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    def emit(number, title, passed, detail=""):
        ACCEPTANCE_LINES.append((number, title, passed, detail))

    return emit


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}  {detail}".rstrip())
