import numpy as np
import pytest

from ghap.mixture import Appearance, GaussianMixture


def random_mixture(rng, n, dim=3, scale=0.05, spread=1.0, with_appearance=False):
    means = rng.uniform(0, spread, (n, dim))
    a = rng.normal(size=(n, dim, dim)) * scale
    covs = a @ a.transpose(0, 2, 1) + 1e-3 * scale * np.eye(dim)
    weights = rng.uniform(0.05, 1.0, n)
    app = None
    if with_appearance:
        app = Appearance(rng.normal(size=n), rng.normal(size=(n, 3)),
                         rng.normal(size=(n, 45)), rng.normal(size=(n, 3)))
    return GaussianMixture(means, covs, weights, app)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
