"""Collects acceptance-criterion outcomes and prints one verdict line per criterion."""

import pytest

_VERDICTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.skipped or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    entry = _VERDICTS.setdefault(number, {"title": title, "passed": True, "details": []})
    entry["passed"] = entry["passed"] and rep.passed
    detail = getattr(item, "acceptance_detail", None)
    if detail and rep.when == "call":
        entry["details"].append(detail)


@pytest.fixture
def verdict(request):
    """Attach a one-line measurement summary to the current criterion test."""
    def record(text: str) -> None:
        request.node.acceptance_detail = text
        print(text)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        entry = _VERDICTS[number]
        status = "PASS" if entry["passed"] else "FAIL"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {number:2d} {status}  {entry['title']}"
                                    + (f"  [{detail}]" if detail else ""))
