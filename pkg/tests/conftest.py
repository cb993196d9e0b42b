import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ergodic_econ.swp_core import deterministic_ensemble

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# filled by test_acceptance; echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


# 1025 unit-spaced points: every power-of-two checkpoint down to t=1 lands on the grid
DET_GRID = np.arange(0, 1025, dtype=float)


@pytest.fixture
def det():
    def make(rate, x0=1.0, n_paths=1):
        return deterministic_ensemble(rate, DET_GRID, x0, n_paths)

    return make
