import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddlab import fixtures
from ddlab.schedule import NoiseSchedule

settings.register_profile(
    "ddlab", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ddlab")


@pytest.fixture
def sched():
    return NoiseSchedule()


@pytest.fixture
def fix_b():
    return fixtures.fix_b()


@pytest.fixture
def fix_c():
    return fixtures.fix_c()


@pytest.fixture
def stationary():
    return fixtures.stationary()


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
