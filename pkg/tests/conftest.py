import numpy as np
import pytest

from uav_adnet.grid import GridSpec, GridVector
from uav_adnet.ingest import Sample


@pytest.fixture
def spec():
    return GridSpec()


@pytest.fixture
def small_spec():
    return GridSpec(rows=4, cols=4)


def random_grid(spec, rng, density=0.05):
    return GridVector(spec, (rng.random(spec.length) < density).astype(np.uint8))


def random_samples(spec, n, seed=0, density=0.05):
    rng = np.random.default_rng(seed)
    return [Sample(random_grid(spec, rng, density), rng.random(3), f"f{i}") for i in range(n)]
