import random

import pytest

from manetsec.crypto import DeterministicProvider


@pytest.fixture
def provider():
    return DeterministicProvider()


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
