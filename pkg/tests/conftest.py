import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; echoed in the terminal summary."""
    def _report(line):
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_design(rng, n, d, ties=False):
    X = rng.random((n, d))
    if ties:
        X = np.round(X * 4) / 4
    return X


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
