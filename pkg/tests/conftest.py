"""Shared fixtures: every test runs in 64-bit mode unless it switches itself."""

import numpy as np
import pytest

from evmamba.tensor import set_precision


@pytest.fixture(autouse=True)
def _float64():
    set_precision(64)
    yield
    set_precision(64)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
