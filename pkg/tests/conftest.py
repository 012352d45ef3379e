import numpy as np
import pytest

import blaircomp as bc


@pytest.fixture
def small_instance():
    return bc.make_instance(2, 3, 3, 10, seed=1)


@pytest.fixture
def small_iterate():
    return bc.random_init(2, 3, 3, np.random.default_rng(2))
