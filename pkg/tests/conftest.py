import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def factor_panel(rng, T, N, r, noise=0.0, rho=None):
    """Exact factor data ``F L' + e`` with optional AR(1) errors."""
    F = rng.normal(size=(T, r))
    L = rng.normal(size=(N, r))
    e = rng.normal(size=(T, N)) * noise
    if rho is not None:
        for t in range(1, T):
            e[t] += rho * e[t - 1]
    return F @ L.T + e, F, L


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
