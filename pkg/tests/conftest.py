import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dft(x):
    """Direct O(N^2) DFT along the last axis (independent oracle)."""
    x = np.asarray(x, dtype=complex)
    N = x.shape[-1]
    j = np.arange(N)
    M = np.exp(-2j * np.pi * np.outer(j, j) / N)
    return x @ M.T


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))
