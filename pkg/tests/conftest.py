import pytest

from stagediff import kernels


@pytest.fixture
def numpy_backend():
    """Pin the pure-numpy kernel path for byte-exact fixtures."""
    prev = kernels.use_numba(False)
    yield
    kernels.use_numba(prev)


@pytest.fixture
def numba_backend():
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba not available")
    prev = kernels.use_numba(True)
    kernels.warmup()
    yield
    kernels.use_numba(prev)
