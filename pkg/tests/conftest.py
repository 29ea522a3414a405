import pytest
from threadpoolctl import threadpool_limits

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.fixture(autouse=True, scope="session")
def _single_blas_thread():
    # timings and bitwise comparisons assume one BLAS thread
    with threadpool_limits(limits=1):
        yield


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        detail = dict(item.user_properties).get("detail", "")
        if rep.outcome == "skipped" and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2]
        _CRITERIA[number] = (status, title, detail, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail, secs = _CRITERIA[n]
        tr.write_line(f"criterion {n:>2} {status:<4} {title} [{secs:.1f} s] {detail}")
