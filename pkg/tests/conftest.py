import numpy as np
import pytest

from opsize.model import from_r


@pytest.fixture
def half_model():
    return from_r(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
