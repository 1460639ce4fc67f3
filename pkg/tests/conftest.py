import numpy as np
import pytest

from bsvie_kit.paths import TimeGrid, simulate_forward, tree_ensemble
from bsvie_kit.regression import BasisSpec, Regressor


@pytest.fixture(scope="session")
def small_grid():
    return TimeGrid.uniform(1.0, 8)


@pytest.fixture(scope="session")
def mc_ensemble(small_grid):
    return simulate_forward(0.0, 1.0, small_grid, 4000, seed=11)


@pytest.fixture(scope="session")
def mc_regressor(mc_ensemble):
    return Regressor(mc_ensemble, BasisSpec("poly", 3))


@pytest.fixture(scope="session")
def tree3():
    grid = TimeGrid.uniform(1.0, 3)
    ens = tree_ensemble(0.0, 1.0, grid)
    return grid, ens, Regressor(ens, BasisSpec("exact"))


def max_abs(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
