import os
import tempfile
from typing import Generator, Iterator
from unittest import mock

import numpy as np
import pytest
from yaml import safe_dump

from libsmoothtail.config import CONFIG_FILE_ENV, default_config
from libsmoothtail.distributions import GpdParams, RngState, gpd_sample

CONFIGURATION = {
    "solver": {
        "tolerance": 1e-9,
        "max_iterations": 300,
    },
    "smoothdist": {"refine_points": 20},
    "simulation": {"default_replicates": 10, "threads": 2},
}


@pytest.fixture(autouse=True)
def clear_config_cache() -> Iterator[None]:
    default_config.cache_clear()
    yield
    default_config.cache_clear()


@pytest.fixture
def config_file() -> Generator[str, None, None]:
    with tempfile.TemporaryDirectory() as temp_dir:
        path = os.path.join(temp_dir, "configuration.yaml")
        with open(path, "w") as f:
            safe_dump(CONFIGURATION, f)
        with mock.patch.dict(os.environ, {CONFIG_FILE_ENV: path}):
            yield path


@pytest.fixture
def gpd_64() -> np.ndarray:
    """
    A seeded GPD(-0.75, 1) sample of size 64.
    """
    return gpd_sample(GpdParams(-0.75), 64, RngState(2024))
