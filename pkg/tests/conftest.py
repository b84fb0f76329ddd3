import numpy as np
import pytest

from dwg.fixtures import sample_sphere, sample_torus


@pytest.fixture(scope="session")
def sphere_10242():
    return sample_sphere(10242, 1.0, seed=2024)


@pytest.fixture(scope="session")
def sphere_10k():
    return sample_sphere(10_000, 1.0, seed=7)


@pytest.fixture(scope="session")
def torus_20k():
    return sample_torus(20_000, 0.3, 0.12, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
