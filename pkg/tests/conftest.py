import numpy as np
import pytest

from nharm.energy import set_threads
from nharm.manifolds import (
    MapField,
    TargetManifold,
    build_icosphere_mesh,
    build_torus_mesh,
)


@pytest.fixture(autouse=True)
def single_thread():
    set_threads(1)
    yield
    set_threads(1)


@pytest.fixture
def sphere2():
    return TargetManifold.sphere(2)


@pytest.fixture
def torus8():
    return build_torus_mesh(2, 8)


@pytest.fixture
def torus64():
    return build_torus_mesh(2, 64)


@pytest.fixture(scope="session")
def ico2():
    return build_icosphere_mesh(2)


@pytest.fixture(scope="session")
def ico3():
    return build_icosphere_mesh(3)


def random_field(mesh, target, seed=0, spread=1.0):
    """Random S^k-valued field: north pole plus Gaussian noise, projected."""
    rng = np.random.default_rng(seed)
    north = np.zeros(target.N)
    north[-1] = 1.0
    values = north + spread * rng.standard_normal((mesh.node_count, target.N))
    return MapField.from_ambient(mesh, target, values)
