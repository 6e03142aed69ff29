"""Shared helpers for the test suite."""

import numpy as np
import pytest

from voxsr import Grid3, Series4, Volume3, series_from_array


def rand_array(shape, seed=0, lo=0.0, hi=100.0):
    """Deterministic float32 array with values in [lo, hi]."""
    g = np.random.default_rng(seed)
    return (lo + (hi - lo) * g.random(shape)).astype(np.float32)


def rand_volume(n, seed=0, spacing=1.5, lo=0.0, hi=100.0):
    shape = (n, n, n) if isinstance(n, int) else n
    grid = Grid3(shape[2], shape[1], shape[0], spacing, spacing, spacing)
    return Volume3(grid, rand_array(shape, seed, lo, hi))


def rand_series(n, t, seed=0, spacing=1.5, lo=0.0, hi=100.0):
    shape = (n, n, n) if isinstance(n, int) else n
    grid = Grid3(shape[2], shape[1], shape[0], spacing, spacing, spacing)
    arr = np.stack([rand_array(shape, seed + i, lo, hi) for i in range(t)])
    return series_from_array(arr, grid)


@pytest.fixture
def grid8():
    return Grid3(8, 8, 8, 1.5, 1.5, 1.5)


@pytest.fixture
def vol8(grid8):
    return Volume3(grid8, rand_array((8, 8, 8), seed=42))
