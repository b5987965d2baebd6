import numpy as np
import pytest

from fsmfg.core import TimeGrid
from fsmfg.cost import (QuadraticCost, coupling_self, coupling_zero,
                        psi_linear, psi_zero)


@pytest.fixture
def quad_self_d2():
    """Quadratic running cost with f^i(theta) = theta^i, zero terminal cost."""
    return QuadraticCost(coupling_self(2))


@pytest.fixture
def quad_self_psi_d2():
    """Same coupling, terminal cost psi^i(theta) = theta^i."""
    return QuadraticCost(coupling_self(2), terminal_cost=psi_linear(2))


@pytest.fixture
def zero_model_d2():
    """f = 0, psi = 0: the game with no coupling and no terminal cost."""
    return QuadraticCost(coupling_zero(2), terminal_cost=psi_zero(2))


@pytest.fixture
def grid_unit():
    return TimeGrid(1.0, 1000)


def random_simplex(rng, d):
    return rng.dirichlet(np.ones(d))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num, status, desc in sorted(RESULTS):
            terminalreporter.write_line(f"[criterion {num:02d}] {status} - {desc}")
