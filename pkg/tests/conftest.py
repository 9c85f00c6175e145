import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blab import build_grid, sample_potential  # noqa: E402
from blab.spectral import boundary_spectral_data  # noqa: E402


@pytest.fixture(scope="session")
def grid16():
    return build_grid(1.0, 1.0, 16, 16)


@pytest.fixture(scope="session")
def grid32():
    return build_grid(1.0, 1.0, 32, 32)


@pytest.fixture(scope="session")
def q0_32(grid32):
    return sample_potential(lambda x, y: 0 * x, grid32, 1.0)


@pytest.fixture(scope="session")
def q1_32(grid32):
    return sample_potential(lambda x, y: 1 + 0 * x, grid32, 1.0)


@pytest.fixture(scope="session")
def bsd0_32(grid32, q0_32):
    return boundary_spectral_data(grid32, q0_32, 200)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
