import pytest

_ACCEPTANCE = {}


@pytest.fixture
def report(request):
    """Record one acceptance line; the outcome comes from the test result."""
    def _record(number, title, detail=""):
        _ACCEPTANCE[number] = [title, detail, request.node.nodeid]
    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        for line in _ACCEPTANCE.values():
            if line[2] == item.nodeid and len(line) == 3:
                line.append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, detail, _, *ok = _ACCEPTANCE[number]
        status = "PASS" if ok and ok[0] else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d}. {title}: {detail}")
