import numpy as np
import pytest

from src.data import SyntheticConfig, gen_synthetic
from src.model import ModelSpec, init_params


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run desk-scale reproductions"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_task():
    """A 3-dimensional synthetic (train, test) pair small enough for exact checks."""
    full = gen_synthetic(SyntheticConfig(n=120, d=3, seed=7))
    return full.subset(np.arange(80)), full.subset(np.arange(80, 120))


@pytest.fixture
def small_spec():
    return ModelSpec(d=3, m=4, p=5)


@pytest.fixture
def small_params(small_spec):
    return init_params(small_spec, 42)
