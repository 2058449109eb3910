"""Dense reference implementations used only by the tests."""
import numpy as np


def dense_supra(net, w=1.0):
    n, L = net.n_nodes, net.n_layers
    m = np.kron(np.ones((L, L)) - np.eye(L), w * np.eye(n))
    for a, layer in enumerate(net.layers):
        m[a * n:(a + 1) * n, a * n:(a + 1) * n] = layer.adjacency.toarray()
    return m


def dense_eigenvector(m):
    vals, vecs = np.linalg.eigh(m)
    v = vecs[:, -1]
    v = v if v.sum() >= 0 else -v
    return vals[-1], v / np.linalg.norm(v)


def dense_pagerank(m, r=0.85):
    """Solve (I - r T) x = (1 - r)/d 1 with dangling columns spread uniformly."""
    d = m.shape[0]
    s = m.sum(axis=0)
    t = np.where(s > 0, m / np.where(s > 0, s, 1.0), 1.0 / d)
    x = np.linalg.solve(np.eye(d) - r * t, np.full(d, (1.0 - r) / d))
    return x / x.sum()
