import numpy as np
import pytest

from eegsad.core import default_layout


@pytest.fixture(scope="session")
def layout():
    return default_layout()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    failed = report.failed
    if report.when == "call" or failed:
        _CRITERIA[props["criterion"]] = ("FAIL" if failed else "PASS", props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=int):
        status, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:>2}: {status}  {detail}")
