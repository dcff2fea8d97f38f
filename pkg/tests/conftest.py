import numpy as np
import pytest

from fbtomo import (ReconConfig, auto_timing, build_model, make_grid,
                    make_ring_array)


@pytest.fixture(scope="session")
def tiny_setup():
    """Small geometry shared by operator and solver unit tests."""
    grid = make_grid(12, 12, 1.2e-3)
    array = make_ring_array(16, 0.035, 270.0)
    timing = auto_timing(grid, array, sample_rate=8e6)
    model = build_model(grid, array, timing)
    return grid, array, timing, model


@pytest.fixture(scope="session")
def tiny_lambda(tiny_setup):
    model = tiny_setup[3]
    return 1e-2 * model.norm_estimate() ** 2


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
