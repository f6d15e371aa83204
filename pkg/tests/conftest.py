import numpy as np
import pytest

from regensampling.dists import RandomStream


@pytest.fixture
def rng():
    return RandomStream(20240601, 0)


def stream(seed, sid=0):
    return RandomStream(seed, sid)


def ks_99(n):
    """Asymptotic 99% point of the one-sample KS statistic."""
    return 1.628 / np.sqrt(n)
