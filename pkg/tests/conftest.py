import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def both_backends():
    from hybridskip.kernels import numpy_backend
    backends = [numpy_backend]
    try:
        from hybridskip.kernels import _speedups
        backends.append(_speedups)
    except ImportError:
        pass
    return backends
