import numpy as np
import pytest

from app.core.rng import RandomStreams, StreamRole
from app.models.initialization import InitConfig
from app.models.network import ModelConfig
from app.models.training import LabeledDataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the desk-scale experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale experiment taking minutes, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_config() -> ModelConfig:
    """
    Smallest configuration with one live attention head: d=1, l=2, two heads of width 7
    """
    return ModelConfig(d=1, l=2, h=2, I=7, d_ff=4, N=1, J=2, beta=2.0, K=2)


@pytest.fixture
def encoding_config() -> ModelConfig:
    """
    Configuration of the worked encoding example: d=2, l=4, I=10, h=2
    """
    return ModelConfig(d=2, l=4, h=2, I=10, d_ff=4, N=1, J=2, beta=1.0)


@pytest.fixture
def init_config(small_config) -> InitConfig:
    """
    Initialization with tau = l + 1 and a range of 0.5 * 4^0.1
    """
    return InitConfig(tau=small_config.l + 1, c4=0.5, c5=0.1, seed=11, n=4)


@pytest.fixture
def rng() -> np.random.Generator:
    """
    Deterministic generator for test inputs
    """
    return RandomStreams(1234).generator(StreamRole.VALIDATION)


@pytest.fixture
def small_dataset(small_config, rng) -> LabeledDataset:
    """
    Six labelled inputs on [-1, 1]^(d x l)
    """
    inputs = rng.uniform(-1.0, 1.0, size=(6, small_config.d, small_config.l))
    labels = np.array([1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
    return LabeledDataset(inputs=inputs, labels=labels, A=1.0)
