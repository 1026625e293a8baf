import numpy as np
import pytest

from fqif.estimator import estimate_eigensystem
from fqif.qif import ols_initial
from fqif.simgen import Scenario, gen_dataset


@pytest.fixture(scope="session")
def bm_small():
    ds, truth = gen_dataset(Scenario("bm"), n=60, m=30, seed=11)
    return ds, truth


@pytest.fixture(scope="session")
def bm_eigsys(bm_small):
    ds, _ = bm_small
    return estimate_eigensystem(ds, ols_initial(ds), bandwidth=0.15, grid_size=31).eigsys


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
