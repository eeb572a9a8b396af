from __future__ import annotations

from pathlib import Path

import pytest

from hopdebate.llm import MockBackend, TokenLedger

ROOT = Path(__file__).resolve().parent.parent
DEMO = ROOT / "fixtures" / "demo"
DEMO_QUESTION = (
    "What government position was held by the woman who portrayed Corliss Archer in the film Kiss and Tell?"
)

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by this test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            n, title = m.args
            _criteria.setdefault(n, {"title": title, "outcomes": []})


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for key, n in report.user_properties:
        if key == "criterion" and n in _criteria:
            _criteria[n]["outcomes"].append(report.outcome)


@pytest.fixture(autouse=True)
def _tag_criterion(request):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        request.node.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        entry = _criteria[n]
        outs = entry["outcomes"]
        if not outs:
            status = "NOT RUN"
        elif any(o == "failed" for o in outs):
            status = "FAIL"
        elif all(o == "skipped" for o in outs):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {n}: {status:<7} {entry['title']} ({len(outs)} checks)")


@pytest.fixture
def demo_backend() -> MockBackend:
    return MockBackend.from_file(DEMO / "mock_script.json", TokenLedger("hq-001"))
