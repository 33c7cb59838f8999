import numpy as np
import pytest

from linboltz.carleman import precompute_kernel
from linboltz.core import CollisionKernel, GridSpec, Maxwellian


@pytest.fixture(scope="session")
def tensor_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("tensor-cache")


@pytest.fixture(scope="session")
def M2():
    return Maxwellian(2, (0.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def maxwell_d2():
    return CollisionKernel.maxwell_molecules(2)


@pytest.fixture(scope="session")
def small_tensor(M2, maxwell_d2, tensor_cache):
    """Coarse d=2 Maxwell tensor (32 cells per axis) for fast structural tests."""
    return precompute_kernel(maxwell_d2, M2, GridSpec.default(M2, 32), cache_dir=tensor_cache)


@pytest.fixture(scope="session")
def default_tensor(M2, maxwell_d2, tensor_cache):
    """Default-resolution d=2 Maxwell tensor (64 cells per axis)."""
    return precompute_kernel(maxwell_d2, M2, GridSpec.default(M2), cache_dir=tensor_cache)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
