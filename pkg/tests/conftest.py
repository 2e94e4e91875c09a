import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("dgbench", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dgbench")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import CRITERIA, REPORT

    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(REPORT.get(n, f"SKIP criterion {n:2d} {CRITERIA[n]}: not run"))
