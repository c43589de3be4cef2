"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import time

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def report(request):
    """Attach measured values to the criterion line: ``report(alpha=0.79)``."""
    details = {}
    request.node.criterion_details = details
    request.node.criterion_start = time.perf_counter()

    def add(**kw):
        details.update(kw)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    start = getattr(item, "criterion_start", None)
    elapsed = time.perf_counter() - start if start is not None else call.duration
    _RESULTS[number] = (title, rep.passed, getattr(item, "criterion_details", {}), elapsed)


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, details, elapsed = _RESULTS[number]
        extra = ", ".join(f"{k}={_fmt(v)}" for k, v in details.items())
        tr.write_line(f"{'PASS' if passed else 'FAIL'} {number:2d} {title} [{elapsed:.2f}s] {extra}")
