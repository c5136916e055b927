import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from moexplore.pomdp import PomdpModel

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def chain_model(n: int, horizon: int) -> PomdpModel:
    """Deterministic chain 0 -> 1 -> ... -> n-1 (absorbing), one action, identity O."""
    P = np.zeros((n, 1, n))
    for s in range(n):
        P[s, 0, min(s + 1, n - 1)] = 1.0
    mu = np.zeros(n)
    mu[0] = 1.0
    return PomdpModel(P, np.eye(n), mu, horizon)


@pytest.fixture
def chain():
    return chain_model


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
