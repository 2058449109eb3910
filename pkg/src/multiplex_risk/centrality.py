"""Degree, eigenvector and PageRank centrality for multiplex and aggregate graphs.

``structure="multi"`` works on the supra-adjacency (node copies per layer,
categorical couplings) and contracts the layer index by summation;
``structure="single"`` works on the weighted aggregate graph.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import numpy as np
import scipy.sparse as sp

from .network import MultiplexNetwork, SupraAdjacency, aggregate

MEASURES = ("degree", "eigenvector", "pagerank")
STRUCTURES = ("multi", "single")

Structure = Literal["multi", "single"]


class ConvergenceError(RuntimeError):
    """Iterative solver stopped without meeting its tolerance."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} after {iterations} iterations (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass
class SolverConfig:
    tolerance: float = 1e-10
    max_iterations: int = 10_000
    r: float = 0.85
    coupling_weight: float = 1.0
    dangling: Literal["uniform", "copies"] = "uniform"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 < self.r <= 1.0:
            raise ValueError("teleport rate r must lie in (0, 1]")
        if self.coupling_weight < 0:
            raise ValueError("coupling_weight must be non-negative")
        if self.dangling not in ("uniform", "copies"):
            raise ValueError(f"unknown dangling policy {self.dangling!r}")


@dataclass
class CentralityVector:
    measure: str
    structure: str
    scores: np.ndarray
    meta: dict = field(default_factory=dict)


def _check_structure(structure: str) -> None:
    if structure not in STRUCTURES:
        raise ValueError(f"structure must be one of {STRUCTURES}, got {structure!r}")


def degree(net: MultiplexNetwork, structure: Structure = "multi") -> CentralityVector:
    """Multidegree (sum of intra-layer degrees) or aggregate strength.

    Both are returned as exact integers; couplings are not counted.
    """
    _check_structure(structure)
    if structure == "multi":
        scores = net.layer_degrees().sum(axis=0)
    else:
        agg = aggregate(net)
        scores = np.rint(np.asarray(agg.sum(axis=1)).ravel()).astype(np.int64)
    return CentralityVector("degree", structure, scores.astype(np.int64))


def _power_eigen(matvec, dim: int, cfg: SolverConfig, shift: float):
    """Leading eigenpair of a symmetric non-negative operator.

    Iterates ``(A + shift I)`` so that bipartite spectra (``-lambda`` as an
    eigenvalue) cannot stall the iteration.
    """
    x = np.full(dim, 1.0 / np.sqrt(dim))
    residual = np.inf
    lam = 0.0
    for it in range(1, cfg.max_iterations + 1):
        ax = matvec(x)
        lam = float(x @ ax)
        residual = float(np.linalg.norm(ax - lam * x))
        if residual <= cfg.tolerance:
            return x, lam, it, residual
        y = ax + shift * x
        norm = np.linalg.norm(y)
        if norm == 0:
            raise ConvergenceError("eigenvector iteration collapsed", it, residual)
        x = y / norm
    raise ConvergenceError("eigenvector iteration did not converge", cfg.max_iterations, residual)


def eigenvector(
    net: MultiplexNetwork, structure: Structure = "multi", cfg: SolverConfig | None = None
) -> CentralityVector:
    """Perron-vector centrality, L2-normalised over the iterated state space.

    For ``multi`` the supra eigenvector (length ``N * L``) is summed over layers.
    """
    cfg = cfg or SolverConfig()
    _check_structure(structure)
    if structure == "multi":
        op = SupraAdjacency(net, cfg.coupling_weight)
        if sum(layer.edge_count for layer in net.layers) == 0 and (
            cfg.coupling_weight == 0 or net.n_layers < 2
        ):
            raise ValueError("eigenvector centrality of an empty graph is undefined")
        matvec, dim = op.matvec, op.shape[0]
    else:
        agg = aggregate(net)
        if agg.nnz == 0:
            raise ValueError("eigenvector centrality of an empty graph is undefined")
        matvec, dim = agg.dot, agg.shape[0]
    vec, lam, it, residual = _power_eigen(matvec, dim, cfg, shift=1.0)
    if vec.sum() < 0:
        vec = -vec
    vec = np.clip(vec, 0.0, None)
    scores = vec.reshape(-1, net.n_nodes).sum(axis=0)
    return CentralityVector(
        "eigenvector", structure, scores,
        {"iterations": it, "residual": residual, "eigenvalue": lam, "state": vec},
    )


def _pagerank_iterate(adj_matvec, strength: np.ndarray, cfg: SolverConfig, copies_of=None):
    """Power iteration on ``r * A D^-1 + teleport`` with dangling handling.

    ``copies_of`` (only for the ``copies`` policy) maps a dangling state's mass
    onto the other copies of its node: it is ``(n_nodes, n_layers)``.
    """
    dim = strength.size
    dangling = strength == 0
    inv = np.zeros(dim)
    inv[~dangling] = 1.0 / strength[~dangling]
    r = cfg.r
    x = np.full(dim, 1.0 / dim)
    delta = np.inf
    for it in range(1, cfg.max_iterations + 1):
        y = r * adj_matvec(x * inv)
        if dangling.any():
            if copies_of is None:
                y += r * x[dangling].sum() / dim
            else:
                y += r * copies_of(np.where(dangling, x, 0.0))
        y += (1.0 - r) / dim
        y /= y.sum()
        delta = float(np.abs(y - x).sum())
        x = y
        if delta <= cfg.tolerance:
            return x, it, delta
    raise ConvergenceError("pagerank iteration did not converge", cfg.max_iterations, delta)


def pagerank(
    net: MultiplexNetwork, structure: Structure = "multi", cfg: SolverConfig | None = None
) -> CentralityVector:
    """PageRank with teleport rate ``1 - r``; scores sum to one."""
    cfg = cfg or SolverConfig()
    _check_structure(structure)
    n, L = net.n_nodes, net.n_layers
    copies_of = None
    if structure == "multi":
        op = SupraAdjacency(net, cfg.coupling_weight)
        strength = op.strengths()
        matvec = op.matvec
        if cfg.dangling == "copies" and L > 1:
            def copies_of(mass):
                m = mass.reshape(L, n)
                return np.tile(m.sum(axis=0), L) / (L - 1) - m.reshape(-1) / (L - 1)
    else:
        agg = aggregate(net)
        strength = np.asarray(agg.sum(axis=1)).ravel()
        matvec = agg.dot
    vec, it, delta = _pagerank_iterate(matvec, strength, cfg, copies_of)
    scores = vec.reshape(-1, n).sum(axis=0)
    return CentralityVector(
        "pagerank", structure, scores,
        {"iterations": it, "residual": delta, "state": vec},
    )


def compute_all(
    net: MultiplexNetwork, cfg: SolverConfig | None = None
) -> dict[tuple[str, str], CentralityVector]:
    """All measure x structure combinations, keyed ``(measure, structure)``."""
    cfg = cfg or SolverConfig()
    out = {}
    for structure in STRUCTURES:
        out["degree", structure] = degree(net, structure)
        out["eigenvector", structure] = eigenvector(net, structure, cfg)
        out["pagerank", structure] = pagerank(net, structure, cfg)
    return out


def write_centralities(
    net: MultiplexNetwork, vectors: Iterable[CentralityVector], path: Path
) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "measure", "structure", "score"])
        for cv in vectors:
            for node_id, s in zip(net.node_ids, cv.scores):
                w.writerow([int(node_id), cv.measure, cv.structure, repr(float(s))])


def read_centralities(path: Path, node_ids: np.ndarray | None = None) -> dict[tuple[str, str], np.ndarray]:
    """Load ``node_id,measure,structure,score`` rows into per-key arrays.

    Arrays follow ``node_ids`` order when given, else ascending node id.
    """
    import pandas as pd

    df = pd.read_csv(path, float_precision="round_trip")
    missing = {"node_id", "measure", "structure", "score"} - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    out = {}
    for (measure, structure), g in df.groupby(["measure", "structure"], sort=True):
        s = g.set_index("node_id")["score"]
        order = np.sort(s.index.to_numpy()) if node_ids is None else node_ids
        out[measure, structure] = s.reindex(order).to_numpy(dtype=np.float64)
    return out
