"""Shared fixtures for the shotperc test suite"""

import pytest

from shotperc.field_synthesis import GridSpec
from shotperc.kernel import Kernel, TruncatedKernel
from shotperc.point_process import BoxRegion
from shotperc.rng import RngStream


@pytest.fixture
def rational():
    """g(x) = (1 + |x|²)^(-3/2) in d = 2"""
    return Kernel.rational(3.0, 2)


@pytest.fixture
def truncated(rational):
    return TruncatedKernel(rational, 4.0)


@pytest.fixture
def small_grid():
    return GridSpec(BoxRegion((0.0, 0.0), (2.0, 2.0)), 1 / 8)


@pytest.fixture
def stream():
    return RngStream(20240917)
