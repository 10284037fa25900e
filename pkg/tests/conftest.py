"""Collects acceptance-criterion outcomes and prints one line per criterion."""

from collections import defaultdict

import pytest

_RESULTS: dict[int, list[tuple[str, str, float, str]]] = defaultdict(list)
_NOTES: dict[str, list[str]] = defaultdict(list)


@pytest.fixture()
def note(request):
    """Attach a short measurement string to the current criterion line."""
    return lambda text: _NOTES[request.node.nodeid].append(text)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and not rep.passed):
        return
    number = mark.args[0]
    part = mark.args[1] if len(mark.args) > 1 else ""
    detail = "; ".join(_NOTES.get(item.nodeid, []))
    if rep.failed and not detail:
        detail = str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else rep.longrepr)
    elif rep.skipped:
        detail = str(rep.longrepr[2]) if isinstance(rep.longrepr, tuple) else detail
    _RESULTS[number].append((part, rep.outcome, rep.duration, detail.splitlines()[0] if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        parts = _RESULTS[number]
        status = "FAIL" if any(o == "failed" for _, o, _, _ in parts) else "PASS"
        total = sum(d for _, _, d, _ in parts)
        body = " | ".join(
            f"{p + ': ' if p else ''}{o}{' - ' + d if d else ''}" for p, o, _, d in parts
        )
        terminalreporter.write_line(f"criterion {number:2d}: {status} ({total:.1f} s) {body}")
