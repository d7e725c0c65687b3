import pytest

_ACCEPTANCE = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; call with (passed, detail) before asserting."""
    def record(passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {request.node.name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
