import pytest

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance check")


@pytest.fixture
def verdict(request):
    """Call with (passed, detail) once the check has been measured; one line per check is printed at the end."""
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args

    def record(passed: bool, detail: str = ""):
        line = f"[{number:2d}] {'PASS' if passed else 'FAIL'}  {title}  ({detail})"
        print(line, flush=True)
        _VERDICTS[number] = line
        return passed

    yield record
    if number not in _VERDICTS:
        _VERDICTS[number] = f"[{number:2d}] FAIL  {title}  (raised before a verdict)"


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.write_sep("=", "acceptance checks")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
