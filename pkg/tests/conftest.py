from random import Random

import pytest

from ganas.genome import SearchSpaceConfig


@pytest.fixture
def cfg():
    return SearchSpaceConfig()


@pytest.fixture
def tiny_cfg():
    # restricted space small enough for exhaustive enumeration
    return SearchSpaceConfig(feature_maps=(64, 128), max_length=4)


@pytest.fixture
def rng():
    return Random(1234)
