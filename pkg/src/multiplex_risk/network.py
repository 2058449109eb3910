"""Node-aligned multiplex networks.

Every layer holds the same node set; the only inter-layer structure is the
categorical coupling of each node to its own copies, which is never stored
explicitly.  Layer adjacencies are symmetric CSR matrices with sorted column
indices.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator

DEFAULT_LAYERS = ("family", "household", "school", "work")


class NetworkError(ValueError):
    """Raised for invalid network input (unknown ids, self-loops, ...)."""


def _symmetric_csr(n: int, src: np.ndarray, dst: np.ndarray) -> sp.csr_matrix:
    """Build a simple undirected 0/1 adjacency from (possibly repeated) pairs."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    if lo.size:
        keys = np.unique(lo * n + hi)
        lo, hi = keys // n, keys % n
    rows = np.concatenate([lo, hi])
    cols = np.concatenate([hi, lo])
    data = np.ones(rows.size, dtype=np.float64)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.sort_indices()
    return adj


@dataclass(frozen=True)
class LayerGraph:
    """One undirected simple layer over the full node set."""

    name: str
    adjacency: sp.csr_matrix

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.nnz // 2)

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def edges(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array of index pairs with i < j, sorted."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.column_stack([coo.row[order], coo.col[order]]).astype(np.int64)


@dataclass(frozen=True)
class MultiplexNetwork:
    """Node-aligned multiplex: ``layers[a].adjacency`` is ``n_nodes x n_nodes``."""

    node_ids: np.ndarray
    layers: tuple[LayerGraph, ...]
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.node_ids)
        for layer in self.layers:
            if layer.adjacency.shape != (n, n):
                raise NetworkError(f"layer {layer.name} is not aligned with {n} nodes")
        if self._index is None:
            object.__setattr__(
                self, "_index", {int(v): i for i, v in enumerate(self.node_ids)}
            )

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def layer_names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    def layer(self, name: str) -> LayerGraph:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def index_of(self, node_id: int) -> int:
        return self._index[int(node_id)]

    def layer_degrees(self) -> np.ndarray:
        """Degree matrix of shape (n_layers, n_nodes)."""
        return np.vstack([layer.degrees() for layer in self.layers])


def build_multiplex(
    edge_lists: Mapping[str, Iterable[tuple[int, int]]],
    registry: Iterable[int],
) -> MultiplexNetwork:
    """Assemble a multiplex from per-layer external-id edge lists.

    Node indices follow the sorted external ids.  Reversed and repeated
    edges collapse to one undirected edge.

    Raises:
        NetworkError: on an id missing from the registry or on a self-loop.
    """
    ids = np.unique(np.fromiter((int(v) for v in registry), dtype=np.int64))
    n = ids.size
    layers = []
    for name, edges in edge_lists.items():
        pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        layers.append(_layer_from_external(name, pairs, ids))
    return MultiplexNetwork(node_ids=ids, layers=tuple(layers))


def _layer_from_external(name: str, pairs: np.ndarray, ids: np.ndarray) -> LayerGraph:
    n = ids.size
    if pairs.size == 0:
        return LayerGraph(name, _symmetric_csr(n, np.empty(0), np.empty(0)))
    pos = np.searchsorted(ids, pairs)
    pos_c = np.minimum(pos, max(n - 1, 0))
    known = (pos < n) & (ids[pos_c] == pairs) if n else np.zeros_like(pairs, bool)
    if not known.all():
        bad = pairs[~known][0]
        raise NetworkError(f"unknown node {bad} in layer {name}")
    loops = pairs[:, 0] == pairs[:, 1]
    if loops.any():
        raise NetworkError(f"self-loop on node {pairs[loops][0, 0]} in layer {name}")
    return LayerGraph(name, _symmetric_csr(n, pos[:, 0], pos[:, 1]))


def from_index_edges(
    n_nodes: int,
    edges: Mapping[str, np.ndarray],
    node_ids: Sequence[int] | None = None,
) -> MultiplexNetwork:
    """Build directly from 0-based index pairs (used by the generator)."""
    ids = np.arange(n_nodes, dtype=np.int64) if node_ids is None else np.asarray(node_ids)
    layers = []
    for name, pairs in edges.items():
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if (pairs[:, 0] == pairs[:, 1]).any():
            raise NetworkError(f"self-loop in layer {name}")
        layers.append(LayerGraph(name, _symmetric_csr(n_nodes, pairs[:, 0], pairs[:, 1])))
    return MultiplexNetwork(node_ids=ids, layers=tuple(layers))


def aggregate(net: MultiplexNetwork) -> sp.csr_matrix:
    """Collapse layers: weight of (i, j) is the number of layers holding the edge."""
    total = sp.csr_matrix((net.n_nodes, net.n_nodes), dtype=np.float64)
    for layer in net.layers:
        total = total + layer.adjacency
    total = sp.csr_matrix(total)
    total.sort_indices()
    return total


class SupraAdjacency(LinearOperator):
    """Matrix-free supra-adjacency of a multiplex.

    Supra vectors are layer-major: entry ``a * n_nodes + i`` is node ``i`` in
    layer ``a``.  Diagonal blocks are the layer adjacencies; every
    off-diagonal block is ``coupling_weight * I``.
    """

    def __init__(self, net: MultiplexNetwork, coupling_weight: float = 1.0):
        if coupling_weight < 0:
            raise NetworkError("coupling_weight must be non-negative")
        self.net = net
        self.coupling_weight = float(coupling_weight)
        self.n_nodes = net.n_nodes
        self.n_layers = net.n_layers
        dim = self.n_nodes * self.n_layers
        super().__init__(dtype=np.float64, shape=(dim, dim))

    def _matvec(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(self.n_layers, self.n_nodes)
        out = np.empty_like(x)
        total = x.sum(axis=0)
        w = self.coupling_weight
        for a, layer in enumerate(self.net.layers):
            out[a] = layer.adjacency @ x[a]
            if w:
                out[a] += w * (total - x[a])
        return out.reshape(-1)

    def _rmatvec(self, x):
        return self._matvec(x)

    def strengths(self) -> np.ndarray:
        """Row sums of the supra matrix (intra-layer degree plus couplings)."""
        deg = self.net.layer_degrees().astype(np.float64)
        return (deg + self.coupling_weight * (self.n_layers - 1)).reshape(-1)

    def block(self, a: int, b: int) -> sp.csr_matrix:
        if a == b:
            return self.net.layers[a].adjacency
        return self.coupling_weight * sp.identity(self.n_nodes, format="csr")


def supra_adjacency(net: MultiplexNetwork, coupling_weight: float = 1.0) -> SupraAdjacency:
    return SupraAdjacency(net, coupling_weight)


# ---------------------------------------------------------------------------
# descriptive statistics

STATS_COLUMNS = (
    "layer", "nodes", "ties", "clustering", "components", "giant_component_pct",
    "degree_p5", "degree_mean", "degree_median", "degree_p95", "degree_sd",
)


@dataclass
class LayerStats:
    layer: str
    nodes: int
    ties: int
    clustering: float
    components: int
    giant_component_pct: float
    degree_p5: float
    degree_mean: float
    degree_median: float
    degree_p95: float
    degree_sd: float

    def as_row(self) -> list:
        return [getattr(self, c) for c in STATS_COLUMNS]


def count_triangles(adj: sp.csr_matrix, chunk: int = 4096) -> int:
    """Number of triangles in a 0/1 symmetric adjacency, row-chunked."""
    adj = sp.csr_matrix(adj, dtype=np.float64)
    total = 0.0
    for start in range(0, adj.shape[0], chunk):
        rows = adj[start:start + chunk]
        total += (rows @ adj).multiply(rows).sum()
    return int(round(total / 6.0))


def transitivity(adj: sp.csr_matrix) -> float:
    """Global clustering: 3 * triangles / connected triples (nan when no triples)."""
    deg = np.diff(adj.indptr).astype(np.float64)
    triads = float((deg * (deg - 1) / 2).sum())
    if triads == 0:
        return float("nan")
    return 3.0 * count_triangles(adj) / triads


def layer_stats(name: str, adj: sp.csr_matrix) -> LayerStats:
    """Descriptive summary of one undirected 0/1 layer.

    Only nodes with at least one tie count as layer members; isolated copies
    are left out of node counts, components and degree moments.
    """
    deg = np.diff(adj.indptr)
    active = np.flatnonzero(deg > 0)
    if active.size == 0:
        nan = float("nan")
        return LayerStats(name, 0, 0, nan, 0, nan, nan, nan, nan, nan, nan)
    sub = adj[active][:, active]
    n_comp, labels = connected_components(sub, directed=False)
    giant = np.bincount(labels).max()
    d = deg[active].astype(np.float64)
    return LayerStats(
        layer=name,
        nodes=int(active.size),
        ties=int(deg.sum() // 2),
        clustering=transitivity(adj),
        components=int(n_comp),
        giant_component_pct=100.0 * giant / active.size,
        degree_p5=float(np.percentile(d, 5)),
        degree_mean=float(d.mean()),
        degree_median=float(np.median(d)),
        degree_p95=float(np.percentile(d, 95)),
        degree_sd=float(d.std(ddof=1)) if d.size > 1 else 0.0,
    )


def descriptive_stats(net: MultiplexNetwork) -> list[LayerStats]:
    """Per-layer stats followed by a row for the (unweighted) aggregate graph."""
    rows = [layer_stats(layer.name, layer.adjacency) for layer in net.layers]
    agg = aggregate(net)
    agg.data[:] = 1.0
    rows.append(layer_stats("aggregate", agg))
    return rows


def n_components(adj: sp.csr_matrix) -> tuple[int, np.ndarray]:
    return connected_components(adj, directed=False)


# ---------------------------------------------------------------------------
# file I/O

def write_edge_lists(net: MultiplexNetwork, directory: Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for layer in net.layers:
        path = directory / f"layer_{layer.name}.csv"
        e = net.node_ids[layer.edges()]
        with open(path, "w", newline="") as fh:
            fh.write("src,dst\n")
            if len(e):
                np.savetxt(fh, e, fmt="%d", delimiter=",")
        paths.append(path)
    reg = directory / "registry.txt"
    with open(reg, "w") as fh:
        np.savetxt(fh, net.node_ids, fmt="%d")
    paths.append(reg)
    return paths


def read_edge_lists(directory: Path, layer_names: Sequence[str] | None = None) -> MultiplexNetwork:
    """Inverse of :func:`write_edge_lists`."""
    directory = Path(directory)
    reg = directory / "registry.txt"
    if not reg.exists():
        raise FileNotFoundError(reg)
    ids = np.loadtxt(reg, dtype=np.int64, ndmin=1)
    if layer_names is None:
        layer_names = _layers_in(directory)
    edges = {}
    for name in layer_names:
        path = directory / f"layer_{name}.csv"
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
            if [h.strip() for h in header] != ["src", "dst"]:
                raise NetworkError(f"{path}: expected header src,dst")
            data = np.loadtxt(fh, dtype=np.int64, delimiter=",", ndmin=2)
        edges[name] = data.reshape(-1, 2)
    return build_multiplex(edges, ids)


def _layers_in(directory: Path) -> list[str]:
    found = {p.stem[len("layer_"):] for p in directory.glob("layer_*.csv")}
    ordered = [name for name in DEFAULT_LAYERS if name in found]
    return ordered + sorted(found - set(ordered))


def write_stats(rows: Sequence[LayerStats], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r.as_row()])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
