import numpy as np
import pytest

from ntkc import Dataset, sample_gmm, spiked_two_class_model


@pytest.fixture(scope="session")
def small_model():
    return spiked_two_class_model(64)


@pytest.fixture(scope="session")
def small_dataset(small_model):
    return sample_gmm(small_model, 128, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture()
def random_gram(rng):
    x = rng.standard_normal((32, 20)) / np.sqrt(32)
    return x
