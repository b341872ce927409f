import numpy as np
import pytest

from coclr.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
