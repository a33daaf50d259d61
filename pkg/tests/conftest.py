import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from spectral import GridSpec  # noqa: E402


@pytest.fixture
def grid():
    return GridSpec(16, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hermitian_coeffs(grid):
    """Random coefficient tables of a real field, built from random node samples."""
    from spectral import spectral_coeffs

    def make(seed: int = 0, components: int = 0):
        gen = np.random.default_rng(seed)
        shape = (components, grid.n, grid.n) if components else (grid.n, grid.n)
        return spectral_coeffs(grid, gen.standard_normal(shape))

    return make
