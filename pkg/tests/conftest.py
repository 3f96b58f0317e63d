import numpy as np
import pytest

from scorethin import BERNOULLI, GAUSSIAN, POISSON, Dataset

# criterion lines recorded by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def random_dataset(family, n, p, rng, scale=0.5):
    """Random design and an outcome drawn from ``family`` at a random theta."""
    X = rng.standard_normal((n, p))
    theta = scale * rng.standard_normal(p) / np.sqrt(p)
    eta = X @ theta
    if family is GAUSSIAN:
        y = eta + rng.standard_normal(n)
    elif family is BERNOULLI:
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    elif family is POISSON:
        y = rng.poisson(np.exp(eta)).astype(float)
    else:
        raise ValueError(family)
    return Dataset(X, y), theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
