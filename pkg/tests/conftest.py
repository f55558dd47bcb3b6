import time

import pytest

SESSION = {"start": None, "lines": []}
SUITE_BUDGET_TEST = "test_criterion_10_suite_runtime"


def pytest_sessionstart(session):
    SESSION["start"] = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # the whole-suite runtime check has to run after everything else
    last = [i for i in items if i.name == SUITE_BUDGET_TEST]
    items[:] = [i for i in items if i.name != SUITE_BUDGET_TEST] + last


def pytest_terminal_summary(terminalreporter):
    if SESSION["lines"]:
        terminalreporter.section("acceptance criteria")
        for line in SESSION["lines"]:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(capsys):
    """Record and print one PASS/FAIL line, then assert the outcome."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
        SESSION["lines"].append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


@pytest.fixture
def session_elapsed():
    return lambda: time.perf_counter() - SESSION["start"]
