import json

import numpy as np
import pytest

from avae.datasets import make_dataset
from avae.trainer import TrainConfig, train

SMOKE_CONFIG = {
    "latent_dim": 2,
    "kde_samples": 500,
    "epochs": 30,
    "learning_rate": 0.002,
    "seed": 0,
    "dataset": {"kind": "mixture", "n": 10000, "k": 2, "d": 2, "spread": 0.7, "seed": 0},
}


@pytest.fixture(scope="session")
def smoke_config():
    return TrainConfig(**json.loads(json.dumps(SMOKE_CONFIG)))


@pytest.fixture(scope="session")
def smoke_run(smoke_config):
    """One trained smoke model shared by every test that needs it."""
    import time

    t0 = time.perf_counter()
    dataset = make_dataset(smoke_config.dataset)
    result = train(smoke_config, dataset)
    result.runtime = time.perf_counter() - t0
    result.dataset = dataset
    return result


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
