import numpy as np
import pytest

from seqpcn.grid import CovarianceModel, build_grid, build_prior


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_prior():
    """3 x 3 anisotropic exponential field on a 300 m square."""
    grid = build_grid(3, 3, 300.0, 300.0)
    model = CovarianceModel("exponential", (150.0, 250.0), 135.0, 1.0)
    return build_prior(grid, model, -2.5)


@pytest.fixture(scope="session")
def prior_8x8():
    grid = build_grid(8, 8, 5000.0, 5000.0)
    model = CovarianceModel("exponential", (1500.0, 2000.0), 135.0, 1.0)
    return build_prior(grid, model, -2.5)
