import numpy as np
import pytest

from relumax.backend import available_backends
from relumax.dgp import DgpSpec, default_direction, gen_single_index, gen_two_index


@pytest.fixture(scope="session")
def theta0():
    return default_direction()


@pytest.fixture(scope="session")
def single_small(theta0):
    return gen_single_index(DgpSpec(design="single_index", n=400, seed=101))


@pytest.fixture(scope="session")
def two_small(theta0):
    return gen_two_index(DgpSpec(design="two_index", n=400, seed=202))


@pytest.fixture(params=sorted(available_backends()))
def backend_impl(request):
    return available_backends()[request.param]


def random_unit(rng, d=3):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)
