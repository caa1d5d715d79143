import numpy as np
import pytest

from lfdesign.model import s1_quadratic, s2_quadratic


@pytest.fixture
def s1():
    return s1_quadratic()


@pytest.fixture
def s2():
    return s2_quadratic()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
