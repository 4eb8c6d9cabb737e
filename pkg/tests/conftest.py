import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from loopsoup.fixtures import C2, asymmetric3, single_state, three_cycle
from loopsoup.soup import spawn_rng

settings.register_profile("default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def c2():
    return C2()


@pytest.fixture
def cycle3():
    return three_cycle()


@pytest.fixture
def single():
    return single_state()


@pytest.fixture
def asym3():
    return asymmetric3()


@pytest.fixture
def rng(request):
    # one stream per test, stable across runs and test ordering
    return spawn_rng(20240601, request.node.nodeid)


def within(estimate, stderr, exact, z=4.0):
    return abs(estimate - exact) <= z * stderr


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return x.mean(), x.std(ddof=1) / np.sqrt(x.size)
