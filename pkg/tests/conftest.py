import numpy as np
import pytest

from bwla.synth import make_rng


@pytest.fixture
def rng():
    return make_rng(0xB31A)


def philox(seed: int) -> np.random.Generator:
    return make_rng(seed)
