import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from continual.schemas import SyntheticSpec
from continual.services.network import Network
from continual.services.streams import generate_synthetic, make_nc_stream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset():
    """6 classes x 60 samples in 8 dimensions: 288 train / 72 test."""
    return generate_synthetic(SyntheticSpec(n_classes=6, samples_per_class=60, input_dim=8, seed=3))


@pytest.fixture
def small_stream(small_dataset):
    return make_nc_stream(small_dataset, classes_per_experience=2, seed=3)


@pytest.fixture
def small_net(small_dataset):
    return Network.build(small_dataset.input_dim, [16, 12], small_dataset.n_classes, np.random.default_rng(7))
