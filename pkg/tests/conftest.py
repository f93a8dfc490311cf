import numpy as np
import pytest


def smooth_image(rng, shape=(24, 24), blobs=4):
    """Sum of random Gaussian blobs kept away from the border."""
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(float)
    img = np.zeros(shape)
    for _ in range(blobs):
        cx, cy = rng.uniform(0.3 * w, 0.7 * w), rng.uniform(0.3 * h, 0.7 * h)
        s = rng.uniform(0.08, 0.15) * min(h, w)
        img += rng.uniform(0.3, 1.0) * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s**2))
    return img


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
