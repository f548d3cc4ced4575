"""Acceptance reporting: one PASS/FAIL line per numbered criterion.

Tests tagged ``@pytest.mark.criterion(n)`` roll up into criterion ``n``; a
criterion passes only when all of its tests pass.  Tests may attach measured
values through the ``note`` fixture, printed under the criterion line.
"""
from collections import defaultdict

import pytest

CRITERIA = {
    1: "gradient integrity",
    2: "generative classifier end to end",
    3: "protocol parity of the head baselines",
    4: "metric oracles",
    5: "greedy decoding determinism",
    6: "scheduler fidelity",
    7: "complexity accounting",
    8: "reproducibility",
    9: "tokenizer counts",
}

_owner = {}
_outcomes = defaultdict(list)
_notes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            _owner[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    n = _owner.get(report.nodeid)
    if n is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        _outcomes[n].append((report.nodeid.split("::")[-1], report.outcome))


@pytest.fixture
def note(request):
    n = _owner.get(request.node.nodeid)

    def add(text):
        _notes[n].append(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _owner:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(set(_owner.values())):
        results = _outcomes.get(n, [])
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(o == "passed" for _, o in results) else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {n}: {CRITERIA.get(n, '')}")
        for name, outcome in results:
            if outcome != "passed":
                terminalreporter.write_line(f"        {outcome}: {name}")
        for text in _notes.get(n, []):
            terminalreporter.write_line(f"        {text}")
