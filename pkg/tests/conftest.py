"""Per-criterion pass/fail summary for the acceptance suite."""

import pytest

_OUTCOMES = {}
_NOTES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion a test belongs to")


def _key(item):
    mark = item.get_closest_marker("criterion")
    return None if mark is None else (int(mark.args[0]), str(mark.args[1]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    key = _key(item)
    if key is None:
        return
    if rep.skipped:
        _OUTCOMES.setdefault(key, "SKIP")
    elif rep.failed:
        _OUTCOMES[key] = "FAIL"
    elif rep.when == "call" and _OUTCOMES.get(key) != "FAIL":
        _OUTCOMES[key] = "PASS"


@pytest.fixture
def note(request):
    """Attach a one-line measurement to the criterion of the running test."""
    key = _key(request.node)

    def add(text):
        _NOTES.setdefault(key, []).append(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for (number, name), status in sorted(_OUTCOMES.items()):
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {name}")
        for text in _NOTES.get((number, name), []):
            terminalreporter.write_line(f"    {text}")
