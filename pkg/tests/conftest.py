import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, ok, detail):
        _ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        print(_ACCEPTANCE[number])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
