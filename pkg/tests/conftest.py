import numpy as np
import pytest

from sobolmat import GaussianProcessSurrogate, RbfKernelParams


def small_gp(seed=0, n=12, m=2, L=2, ls=(0.3, 0.5), noise=1e-3):
    """A conditioned GP with fixed hyperparameters on random data."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, m))
    Y = np.column_stack([np.sin(3 * X[:, 0]) + X[:, -1] ** 2, np.cos(2 * X.sum(axis=1))][:L])
    params = [RbfKernelParams(np.full(m, ls[l % len(ls)]), 1.0 + 0.5 * l, noise) for l in range(L)]
    return GaussianProcessSurrogate.from_params(X, Y, params)


@pytest.fixture
def gp2():
    return small_gp()
