import pytest

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    props = dict(item.user_properties)
    n = props.get("criterion")
    if n is None or rep.when == "teardown":
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = props.get("detail", "")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0][:160] if call.excinfo else "failed"
    _RESULTS[n] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")
