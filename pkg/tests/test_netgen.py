import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from multiplex_risk.netgen import (
    GenParams, GenParamsError, IntDist, enforce_reciprocity, generate, sample_colleagues,
)
from multiplex_risk.network import aggregate, descriptive_stats, transitivity


def components(adj):
    deg = np.diff(adj.indptr)
    active = np.flatnonzero(deg > 0)
    _, labels = connected_components(adj[active][:, active], directed=False)
    return [active[labels == c] for c in range(labels.max() + 1)] if active.size else []


def test_single_school_year_clique():
    p = GenParams(n_students=5, school_year_size="const:5", children_per_family="const:1",
                  with_adults=False, rng_seed=1)
    net = generate(p)
    assert net.n_nodes == 5
    assert net.layer("school").edge_count == 10
    for name in ("family", "household", "work"):
        assert net.layer(name).edge_count == 0


def test_household_size_const():
    p = GenParams(n_students=300, household_size="const:4", children_per_family="const:2",
                  two_parent_share=1.0, cohabit_share=1.0, rng_seed=2)
    adj = generate(p).layer("household").adjacency
    comps = components(adj)
    assert comps
    for c in comps:
        assert c.size == 4
        assert adj[c][:, c].nnz // 2 == 6


def test_colleague_cap_pre_closure():
    rng = np.random.default_rng(0)
    members = np.arange(1000, 1150)
    pairs = sample_colleagues(members, 100, rng)
    src, counts = np.unique(pairs[:, 0], return_counts=True)
    np.testing.assert_array_equal(src, members)
    assert (counts == 100).all()
    assert (pairs[:, 0] != pairs[:, 1]).all()
    assert np.unique(pairs, axis=0).shape[0] == pairs.shape[0]
    closed = enforce_reciprocity(pairs)
    deg = np.bincount(closed.ravel() - 1000)
    assert deg.min() >= 100 and deg.max() > 100


def test_work_degree_exact_for_small_workplaces():
    p = GenParams(n_students=200, workplace_size="const:30", multi_job_share=0.0,
                  bridge=False, rng_seed=4)
    work = generate(p).layer("work")
    deg = work.degrees()
    assert set(np.unique(deg[deg > 0])) == {29}


def test_reciprocity_examples():
    assert enforce_reciprocity([(1, 2)]).tolist() == [[1, 2]]
    assert enforce_reciprocity([(1, 2), (2, 1)]).tolist() == [[1, 2]]
    assert len(enforce_reciprocity([(1, 2), (3, 4), (5, 1), (2, 3)])) == 4


def test_deterministic():
    p = GenParams(n_students=150, rng_seed=11)
    a, b = generate(p), generate(GenParams(n_students=150, rng_seed=11))
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.edges(), lb.edges())
    c = generate(GenParams(n_students=150, rng_seed=12))
    assert a.n_nodes != c.n_nodes or not np.array_equal(a.layer("work").edges(), c.layer("work").edges())


def test_structure_and_bridge():
    net = generate(GenParams(n_students=400, rng_seed=5))
    stats = {r.layer: r for r in descriptive_stats(net)}
    assert stats["school"].clustering == 1.0
    assert stats["household"].clustering == 1.0
    assert stats["family"].clustering < 1.0
    assert stats["work"].clustering < 1.0
    n_comp, _ = connected_components(aggregate(net), directed=False)
    assert n_comp == 1


def test_without_bridge_components_reported():
    net = generate(GenParams(n_students=400, school_year_size="const:5", children_per_family="const:1", employment_rate=0.0, bridge=False, rng_seed=5))
    n_comp, _ = connected_components(aggregate(net), directed=False)
    assert n_comp > 1
    bridged = generate(GenParams(n_students=400, school_year_size="const:5", children_per_family="const:1", employment_rate=0.0, rng_seed=5))
    assert connected_components(aggregate(bridged), directed=False)[0] == 1


def test_family_layer_shape():
    p = GenParams(n_students=99, children_per_family="const:3", two_parent_share=1.0, rng_seed=3)
    fam = generate(p).layer("family").adjacency
    for c in components(fam):
        # 3 siblings + 2 parents: sibling triangle plus both parents linked to every child
        assert c.size == 5
        assert fam[c][:, c].nnz // 2 == 3 + 6


def test_intdist_parse_and_reject():
    assert IntDist.parse("choice:1=0.5,2=0.5").mean() == 1.5
    assert IntDist.parse("poisson:3.3").mean() == pytest.approx(3.3)
    assert str(IntDist.parse("const:4")) == "const:4"
    with pytest.raises(GenParamsError):
        IntDist.parse("const:0")
    with pytest.raises(GenParamsError):
        IntDist.parse("choice:1=0,2=0")
    with pytest.raises(GenParamsError):
        IntDist.parse("uniform:3")
    with pytest.raises(GenParamsError):
        GenParams(work_degree_cap=0)
    with pytest.raises(GenParamsError):
        GenParams(n_students=0)


def test_poisson_shift_mean():
    rng = np.random.default_rng(0)
    x = IntDist.parse("poisson:48").sample(rng, 200_000)
    assert x.min() >= 1
    assert abs(x.mean() - 48) < 0.1
