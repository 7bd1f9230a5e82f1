import numpy as np
import pytest


def central_difference(f, x, h=1e-6):
    """Numerical gradient of scalar ``f`` at every entry of ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b, floor=1e-4):
    """Largest elementwise relative error.

    Entries whose combined magnitude is below ``floor`` are compared on an
    absolute scale instead; a true gradient of exactly zero (a bias feeding
    batch normalisation) otherwise turns rounding noise into a huge ratio.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
