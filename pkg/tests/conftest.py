"""Shared fixtures: the canonical parameter set and solved regimes.

The heavyweight solves (signal system in particular) are session-scoped so
the suite pays for them once.
"""

import pytest

from infoprice.agents import solve_all
from infoprice.model import ModelParams
from infoprice.quadrature import gauss_hermite


CANON = ModelParams(mu=0.10, r=0.05, sigma=0.20, lam=0.5, m=-0.05, v=0.01,
                    rho=0.10, R=2.0, v_eps=0.02)


@pytest.fixture(scope="session")
def canon() -> ModelParams:
    return CANON


@pytest.fixture(scope="session")
def rule64():
    return gauss_hermite(64)


@pytest.fixture(scope="session")
def sols(canon, rule64):
    return solve_all(canon, rule64)


@pytest.fixture(scope="session")
def sol_uninformed(sols):
    return sols.uninformed


@pytest.fixture(scope="session")
def sol_timing(sols):
    return sols.timing


@pytest.fixture(scope="session")
def sol_signal(sols):
    return sols.signal


@pytest.fixture(scope="session")
def sol_merton(sols):
    return sols.merton
