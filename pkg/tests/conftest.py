"""Shared fixtures and small helpers for the test suite."""

import numpy as np
import pytest

from aspectgate.tensor import CHECK_DTYPE, Tensor

# finite-difference protocol constants, shared across modules
FD_EPS_TRAIN = 1e-5
FD_EPS_CHECK = 1e-6
KINK_RADIUS = 1e-3
TOL_TRAIN = 1e-4
TOL_CHECK = 1e-6


def wide(rng, *shape, scale=1.0, grad=True):
    """A longdouble tensor with uniform entries, for gradient checking."""
    data = (rng.random(shape) * 2.0 - 1.0) * scale
    return Tensor(data.astype(CHECK_DTYPE), requires_grad=grad)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
