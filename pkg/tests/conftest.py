import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one pass/fail summary line per acceptance criterion."""
    def report(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section('acceptance criteria')
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
