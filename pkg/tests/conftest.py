import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fibertensor import _backend, _pure  # noqa: E402
from fibertensor.phantom import GrayLevels, gen_straight_bundle  # noqa: E402

BACKENDS = ["python"] + (["compiled"] if _backend.name == "compiled" else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel implementation."""
    if request.param == "python":
        monkeypatch.setattr(_backend, "kernels", _pure)
    return request.param


@pytest.fixture(scope="session")
def small_bundle():
    """48^3 bundle along y, 6 voxels across, mild noise."""
    return gen_straight_bundle((48, 48, 48), (1, 1, 1), (0, 1, 0), 3.0, 20, seed=3,
                               gray=GrayLevels(noise=5.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance criteria reporting ----------------------------------------------

import acceptance_report  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = rep.failed
    if rep.when == "call" or failed:
        prev = acceptance_report.RESULTS.get(n)
        if prev is None or prev[1] == "PASS":
            acceptance_report.RESULTS[n] = (title, "FAIL" if failed else "PASS")


def pytest_terminal_summary(terminalreporter):
    results = acceptance_report.RESULTS
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(results):
        title, outcome = results[n]
        detail = acceptance_report.DETAILS.get(n, "")
        tr.write_line(f"{outcome} criterion {n}: {title}" + (f" | {detail}" if detail else ""))
