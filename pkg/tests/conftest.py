import numpy as np
import pytest

from deceptive_control.scenarios import UnicycleScenario


@pytest.fixture(scope="session")
def scenario():
    return UnicycleScenario()


@pytest.fixture(scope="session")
def unicycle(scenario):
    return scenario.problem()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def acceptance(request):
    """``report(k, ok, detail)`` records the outcome of acceptance criterion ``k``."""
    def report(k, ok, detail=""):
        request.config._acceptance[k] = (bool(ok), detail)
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
