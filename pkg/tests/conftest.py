import numpy as np
import pytest


def central_diff(f, x, h=1e-6):
    """Central finite differences of scalar f at x; step scaled by |x_i|."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2 * step)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / (1.0 + np.abs(b)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
