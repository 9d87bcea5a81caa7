import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from unetlite.model import UNetConfig, bind_weights, build, random_store

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = FIXTURES / "golden"


def make_model(config: UNetConfig, seed: int = 0, logit_gain: float = 1.0):
    """Bound float model with deterministic He-init weights."""
    return bind_weights(build(config), random_store(config, seed, logit_gain))


@pytest.fixture
def tiny_config():
    # smallest interesting graph: 2 blocks, 16x16 input
    return UNetConfig(blocks=2, base_channels=4, input_size=(16, 16))


@pytest.fixture
def tiny_model(tiny_config):
    return make_model(tiny_config, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
