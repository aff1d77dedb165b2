import numpy as np
import pytest

from cepsfield.model import CepstralGrid, half_plane_indices


def random_grid(p, rng, scale=0.3):
    """Random symmetric coefficient grid with entries bounded by scale."""
    values = rng.uniform(-scale, scale, size=len(half_plane_indices(p)))
    return CepstralGrid.from_free_params(p, values)


@pytest.fixture
def rng():
    return np.random.default_rng(20260824)
