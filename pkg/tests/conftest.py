import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from changekit.synthetic import cluster_session, random_session


@pytest.fixture
def rng():
    return np.random.default_rng(20240131)


@pytest.fixture
def small_session(rng):
    return random_session(rng, image_size=(48, 48), grid_size=(6, 6), d_m=16, max_proposals_per_side=12)


@pytest.fixture
def two_cluster_session():
    return cluster_session()
