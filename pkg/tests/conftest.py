import numpy as np
import pytest

from eigencoin import load_preset, synthesize


@pytest.fixture(scope="session")
def coin_dataset():
    """Shared noise-free synthetic dataset, one-tenth-scale class ratios."""
    return synthesize(load_preset("imbalanced4_tenth_v1"))


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
