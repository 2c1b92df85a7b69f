import pytest

_RESULTS: list[str] = []


@pytest.fixture
def report_criterion(request):
    """Record one pass/fail line for an acceptance criterion and show it immediately."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _RESULTS.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)
