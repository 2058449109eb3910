import networkx as nx
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from multiplex_risk.network import (
    NetworkError, aggregate, build_multiplex, count_triangles, descriptive_stats,
    from_index_edges, layer_stats, read_edge_lists, supra_adjacency, transitivity,
    write_edge_lists,
)
from conftest import random_multiplex


def test_minimal_build():
    net = build_multiplex({"A": [(1, 2)], "B": [(2, 3)]}, [1, 2, 3])
    assert net.n_nodes == 3
    assert net.layer("A").edge_count == 1
    assert net.layer("B").edge_count == 1


def test_dedup_and_reversal():
    net = build_multiplex({"A": [(1, 2), (2, 1), (1, 2)]}, [1, 2])
    assert net.layer("A").edge_count == 1
    assert (net.layer("A").adjacency != net.layer("A").adjacency.T).nnz == 0


def test_unknown_node_names_id_and_layer():
    with pytest.raises(NetworkError, match="unknown node 3 in layer A"):
        build_multiplex({"A": [(1, 3)]}, [1, 2])


def test_self_loop_rejected():
    with pytest.raises(NetworkError, match="self-loop"):
        build_multiplex({"A": [(2, 2)]}, [1, 2])


def test_indices_follow_sorted_ids():
    net = build_multiplex({"A": [(30, 10)]}, [30, 20, 10])
    assert list(net.node_ids) == [10, 20, 30]
    assert net.index_of(30) == 2
    assert list(net.layer("A").neighbors(0)) == [2]


def test_aggregate_weights():
    net = build_multiplex(
        {"family": [(1, 2)], "household": [(1, 2)], "work": [(2, 3)]}, [1, 2, 3]
    )
    agg = aggregate(net).toarray()
    assert agg[0, 1] == 2
    assert agg[1, 2] == 1


def test_aggregate_conservation_on_generated(rng):
    from multiplex_risk.netgen import GenParams, generate

    net = generate(GenParams(n_students=20, rng_seed=3))
    agg = aggregate(net)
    assert sp.triu(agg, k=1).sum() == sum(l.edge_count for l in net.layers)


def test_supra_couplings_only():
    net = from_index_edges(2, {"a": np.empty((0, 2)), "b": np.empty((0, 2))})
    op = supra_adjacency(net, 1.0)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(op.matvec(x), [3.0, 4.0, 1.0, 2.0])


def test_supra_zero_coupling_is_block_diagonal(rng):
    net = random_multiplex(rng, 15, 3)
    op = supra_adjacency(net, 0.0)
    x = rng.standard_normal(45)
    want = np.concatenate([l.adjacency @ x[a * 15:(a + 1) * 15] for a, l in enumerate(net.layers)])
    np.testing.assert_allclose(op.matvec(x), want)


def test_supra_single_layer_triangle():
    net = from_index_edges(3, {"a": [(0, 1), (1, 2), (0, 2)]})
    x = np.array([1.0, 2.0, 5.0])
    np.testing.assert_array_equal(supra_adjacency(net).matvec(x), [7.0, 6.0, 3.0])


def test_supra_matches_dense_blocks(rng):
    net = random_multiplex(rng, 10, 3)
    op = supra_adjacency(net, 0.7)
    dense = np.block([[op.block(a, b).toarray() if sp.issparse(op.block(a, b)) else op.block(a, b)
                       for b in range(3)] for a in range(3)])
    x = rng.standard_normal(30)
    np.testing.assert_allclose(op.matvec(x), dense @ x, atol=1e-12)
    np.testing.assert_allclose(op.strengths(), dense.sum(axis=1))


def test_negative_coupling_rejected(rng):
    with pytest.raises(NetworkError):
        supra_adjacency(random_multiplex(rng, 4), -0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 25), st.integers(0, 10**6))
def test_supra_symmetry(n, seed):
    r = np.random.default_rng(seed)
    net = random_multiplex(r, n, 3, p=0.3)
    op = supra_adjacency(net, r.uniform(0, 2))
    x, y = r.standard_normal(3 * n), r.standard_normal(3 * n)
    a, b = op.matvec(x) @ y, x @ op.matvec(y)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def test_clique_stats():
    net = from_index_edges(5, {"a": np.argwhere(np.triu(np.ones((5, 5)), 1))})
    s = layer_stats("a", net.layer("a").adjacency)
    assert s.clustering == 1.0
    assert s.components == 1
    assert s.giant_component_pct == 100.0
    assert s.ties == 10


def test_path_clustering_zero():
    net = from_index_edges(3, {"a": [(0, 1), (1, 2)]})
    assert transitivity(net.layer("a").adjacency) == 0.0


def test_empty_layer_reports_markers():
    net = from_index_edges(3, {"a": np.empty((0, 2))})
    s = layer_stats("a", net.layer("a").adjacency)
    assert s.nodes == 0 and s.ties == 0 and np.isnan(s.clustering)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 40), st.floats(0.02, 0.5), st.integers(0, 10**6))
def test_stats_match_networkx(n, p, seed):
    r = np.random.default_rng(seed)
    net = random_multiplex(r, n, 1, p=p)
    adj = net.layers[0].adjacency
    g = nx.from_scipy_sparse_array(adj)
    assert count_triangles(adj) == sum(nx.triangles(g).values()) // 3
    s = layer_stats("L0", adj)
    g.remove_nodes_from([v for v, d in dict(g.degree()).items() if d == 0])
    if g.number_of_nodes() == 0:
        return
    want = nx.transitivity(g)
    if np.isnan(s.clustering):
        assert want == 0
    else:
        assert s.clustering == pytest.approx(want, abs=1e-12)
    assert s.components == nx.number_connected_components(g)
    assert s.nodes == g.number_of_nodes()
    assert s.degree_p5 <= s.degree_median <= s.degree_p95


def test_clique_of_cliques():
    blocks = [np.arange(0, 4), np.arange(4, 9), np.arange(9, 12)]
    pairs = np.concatenate([np.column_stack([b[i], b[j]]) for b in blocks
                            for i, j in [np.triu_indices(b.size, 1)]])
    net = from_index_edges(12, {"h": pairs})
    rows = descriptive_stats(net)
    assert rows[0].clustering == 1.0
    assert rows[0].components == 3
    assert rows[-1].layer == "aggregate"


def test_edge_list_roundtrip(tmp_path, rng):
    net = random_multiplex(rng, 12, 2, names=["family", "work"])
    net = build_multiplex({l.name: net.node_ids[l.edges()] * 7 + 100 for l in net.layers},
                          net.node_ids * 7 + 100)
    write_edge_lists(net, tmp_path)
    back = read_edge_lists(tmp_path)
    assert back.layer_names == net.layer_names
    np.testing.assert_array_equal(back.node_ids, net.node_ids)
    for a, b in zip(back.layers, net.layers):
        assert (a.adjacency != b.adjacency).nnz == 0
