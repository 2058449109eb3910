import numpy as np
import pytest

from multiplex_risk.network import from_index_edges


def random_multiplex(rng, n, n_layers=3, p=0.1, names=None):
    names = names or [f"L{a}" for a in range(n_layers)]
    edges = {}
    for name in names:
        mask = np.triu(rng.random((n, n)) < p, k=1)
        edges[name] = np.argwhere(mask)
    return from_index_edges(n, edges)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
