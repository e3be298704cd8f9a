"""Shared helpers for the test suite."""

import numpy as np
import pytest

from aerolabel.core_io import Raster


def gaussian_blob(size: int, cx: float, cy: float, sigma: float,
                  peak: float = 1.0, base: float = 0.0) -> np.ndarray:
    """2-D Gaussian bump on a constant background, float32."""
    xs = np.arange(size) + 0.5
    ys = np.arange(size) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    field = base + peak * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2 * sigma ** 2))
    return field.astype(np.float32)


def raster1(values) -> Raster:
    """1-channel raster from any 1-D or 2-D array-like."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr[None, :]
    return Raster(arr)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
