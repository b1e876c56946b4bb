import warnings

import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _quiet_numba():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", module="numba")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)
