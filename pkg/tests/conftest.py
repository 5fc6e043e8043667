import numpy as np
import pytest

from epkit.experiments import instance_rng
from epkit.models import GaussianLatentModel
from epkit.sites import Probit


def probit_toy(n, seed, rho=0.5):
    """Equicorrelated Gaussian prior with one probit site per variable."""
    r = instance_rng(seed, n, 7)
    C = (1.0 - rho) * np.eye(n) + rho * np.ones((n, n))
    C = C * r.uniform(0.8, 1.5)
    labels = r.choice([-1.0, 1.0], n)
    return GaussianLatentModel(np.linalg.inv(C), tuple(Probit(label=float(l)) for l in labels))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
