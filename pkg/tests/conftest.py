import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evgrid.grid import build_paper_grid  # noqa: E402
from evgrid.traffic import reference_scenario  # noqa: E402

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def grid():
    return build_paper_grid()


@pytest.fixture(scope="session")
def scenario():
    return reference_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or "::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        props = dict(report.user_properties)
        _ACCEPTANCE[name] = (report.outcome == "passed", props.get("title", name), props.get("measured", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda s: int(s.split("_")[2])):
        ok, title, measured = _ACCEPTANCE[name]
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {title}" + (f"  [{measured}]" if measured else ""))
