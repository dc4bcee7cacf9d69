import numpy as np
import pytest

from mbdenoise.phantom import generate_procedural_phantom


@pytest.fixture(scope="session")
def phantom32():
    return generate_procedural_phantom((32, 32, 32), seed=1)


@pytest.fixture(scope="session")
def phantom48():
    return generate_procedural_phantom((48, 48, 48), seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary: one line per criterion ------------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.outcome != "passed":
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split("_")[2])):
        status, detail = _CRITERIA[name]
        terminalreporter.write_line(f"criterion {int(name.split('_')[2]):2d}: {status}  {detail}")
