import numpy as np
import pytest

from src.schemas.config import SynthConfig, TrainConfig
from src.services.synth import generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic(SynthConfig(n=96, d=8, cone_angle=30, clusters=4, num_pairs=60, seed=3))


@pytest.fixture
def corpus(synthetic):
    return synthetic[0]


@pytest.fixture
def reference(synthetic):
    return synthetic[1]


@pytest.fixture
def dev(synthetic):
    return synthetic[2]


@pytest.fixture
def small_cfg():
    return TrainConfig(batch_size=8, epochs=1, eval_every=4, seed=5)
