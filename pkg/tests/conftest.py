import numpy as np
import pytest

from loomix.conjugate import GaussianLinearModel
from loomix.data import Dataset


def make_conjugate(n=10, p=3, sigma2=1.0, Sigma=1.0, seed=0, theta0=0.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = X @ rng.standard_normal(p) + np.sqrt(sigma2) * rng.standard_normal(n)
    return GaussianLinearModel(Dataset(y, X), sigma2, theta0, Sigma)


def fd_grad(f, theta, rel=1e-6):
    """Central finite differences with step ``rel * (1 + |theta_k|)``."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for k in range(theta.size):
        h = rel * (1 + abs(theta[k]))
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-5):
    scale = max(1.0, float(np.max(np.abs(numeric))))
    err = float(np.max(np.abs(analytic - numeric))) / scale
    assert err <= rtol, err


@pytest.fixture
def toy():
    return make_conjugate()


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
