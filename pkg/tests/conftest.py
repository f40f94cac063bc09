import sys

import pytest
from hypothesis import HealthCheck, settings

from nlimsim.activations import make_activation
from nlimsim.adc import AdcConfig
from nlimsim.config import MacroConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def cfg():
    return MacroConfig()


@pytest.fixture
def ideal_cfg():
    return MacroConfig().ideal()


@pytest.fixture
def sig5():
    return AdcConfig(make_activation("sigmoid"), n_bits=5)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
