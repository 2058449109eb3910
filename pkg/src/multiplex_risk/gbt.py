"""Gradient-boosted regression trees (squared error, exact greedy splits).

Trees are grown level by level.  At each level the candidate splits of all
open nodes are scored in one vectorised pass: rows are ordered by (feature,
node, feature value) and prefix sums of the residuals give the SSE reduction
of every cut.  Ties between equal gains go to the lower feature index, then
to the lower threshold.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .seeding import child_seed


@dataclass
class GbtParams:
    """Booster settings; defaults are the tuned values used for the timing models."""

    n_trees: int = 500
    min_node_size: int = 20
    max_depth: int = 4
    learning_rate: float = 0.1
    min_loss_reduction: float = 0.0
    feature_subsample: float = 1.0
    row_subsample: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 0 or self.min_node_size < 1:
            raise ValueError("max_depth must be >= 0 and min_node_size >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.row_subsample <= 1.0:
            raise ValueError("row_subsample must lie in (0, 1]")
        if not 0.0 < self.feature_subsample <= 1.0:
            raise ValueError("feature_subsample must lie in (0, 1]")


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray
    depth: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        n_levels = int(self.depth.max())
        if n_levels == 0:
            return np.full(x.shape[0], self.value[0])
        leaf = self.feature < 0
        own = np.arange(self.feature.size)
        # leaves point to themselves so every row can take the same number of
        # steps; kids[2v] is the left child of v, kids[2v + 1] the right one
        kids = np.column_stack([np.where(leaf, own, self.left), np.where(leaf, own, self.right)]).ravel()
        feat = np.where(leaf, 0, self.feature)
        thr = np.where(leaf, np.inf, self.threshold)
        flat = np.ascontiguousarray(x).ravel()
        row_base = np.arange(x.shape[0]) * x.shape[1]
        node = np.zeros(x.shape[0], dtype=np.int64)
        # indices are valid by construction, so the cheaper "clip" mode is safe
        for _ in range(n_levels):
            right = flat.take(row_base + feat.take(node, mode="clip"), mode="clip") > thr.take(node, mode="clip")
            node *= 2
            node += right
            node = kids.take(node, mode="clip")
        return self.value.take(node, mode="clip")

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())


@dataclass
class TreeEnsemble:
    base_score: float
    learning_rate: float
    n_features: int
    trees: list[Tree] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)

    def predict(self, x) -> np.ndarray:
        return predict(self, x)


def _best_splits(x, gs, orders, features, node_of, open_mask, min_size):
    """Best cut per open node across ``features``.

    All candidate cuts are scored in one pass over (feature, node) segments,
    each ordered by feature value.  Prefix sums restart for every feature, so
    identical columns score bit-identically and the (lower feature index,
    lower threshold) tie-break is exact.

    Returns ``(node_ids, feature, gain, threshold)`` for nodes with a valid cut.
    """
    p = len(features)
    n_nodes = open_mask.size
    sel_parts, key_parts = [], []
    for j, f in enumerate(features):
        o = orders[f]
        o = o[open_mask[node_of[o]]]
        sel_parts.append(o)
        key_parts.append(j * n_nodes + node_of[o])
    sel = np.concatenate(sel_parts)
    if sel.size == 0:
        return None
    key = np.concatenate(key_parts)
    # int16 keys let numpy use a linear-time radix sort
    sort_key = key.astype(np.int16) if p * n_nodes < 32768 else key
    perm = np.argsort(sort_key, kind="stable")
    sel, key = sel[perm], key[perm]
    fj = key // n_nodes
    fcol = np.asarray(features)[fj]
    xv = x[sel, fcol]
    gv = gs[sel]
    m = sel.size
    change = np.empty(m, dtype=bool)
    change[0] = True
    np.not_equal(key[1:], key[:-1], out=change[1:])
    starts = np.flatnonzero(change)
    seg_len = np.diff(np.append(starts, m))
    seg_id = np.repeat(np.arange(starts.size), seg_len)
    csum = np.empty(m)
    block_edges = np.append(np.searchsorted(fj, np.arange(p)), m)
    for a, b in zip(block_edges[:-1], block_edges[1:]):
        np.cumsum(gv[a:b], out=csum[a:b])
    before = csum[starts] - gv[starts]
    c_left = csum - before[seg_id]
    seg_total = c_left[np.append(starts[1:], m) - 1]
    n_left = np.arange(1, m + 1) - starts[seg_id]
    n_tot = seg_len[seg_id]
    n_right = n_tot - n_left
    c_right = seg_total[seg_id] - c_left
    nxt = np.append(xv[1:], np.inf)
    valid = (n_left >= min_size) & (n_right >= min_size) & (xv < nxt)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        tot = seg_total[seg_id]
        gain = c_left**2 / n_left + c_right**2 / n_right - tot**2 / n_tot
    gain = np.where(valid, gain, -np.inf)
    seg_max = np.maximum.reduceat(gain, starts)
    seg_key = key[starts]
    seg_j, seg_node = seg_key // n_nodes, seg_key % n_nodes
    table = np.full((p, n_nodes), -np.inf)
    table[seg_j, seg_node] = seg_max
    best_j = np.argmax(table, axis=0)  # first maximum: lowest feature index
    best = table[best_j, np.arange(n_nodes)]
    nodes = np.flatnonzero(best > -np.inf)
    if nodes.size == 0:
        return None
    seg_of = np.full((p, n_nodes), -1)
    seg_of[seg_j, seg_node] = np.arange(starts.size)
    chosen = np.zeros(starts.size, dtype=bool)
    chosen[seg_of[best_j[nodes], nodes]] = True
    hit = np.flatnonzero(chosen[seg_id] & valid & (gain == seg_max[seg_id]))
    first = np.ones(hit.size, dtype=bool)
    np.not_equal(seg_id[hit[1:]], seg_id[hit[:-1]], out=first[1:])
    k = hit[first]  # lowest threshold within the winning segment
    lo, hi = xv[k], nxt[k]
    thr = lo + (hi - lo) / 2.0
    thr = np.where(thr >= hi, lo, thr)
    return key[k] % n_nodes, fcol[k], gain[k], thr


def fit_tree(
    x: np.ndarray, residual: np.ndarray, params: GbtParams, features=None, orders=None
) -> Tree:
    """One regression tree on all rows of ``x`` (caller does row sampling).

    ``orders`` may carry a precomputed stable argsort of each feature column.
    """
    n, p = x.shape
    features = np.arange(p) if features is None else np.asarray(features)
    if orders is None:
        orders = {f: np.argsort(x[:, f], kind="stable") for f in features}
    node_of = np.zeros(n, dtype=np.int64)
    feat, thr, left, right, cover, gain, depth = [-1], [0.0], [-1], [-1], [n], [0.0], [0]
    frontier = [0]
    for level in range(params.max_depth):
        n_nodes = len(feat)
        counts = np.bincount(node_of, minlength=n_nodes)
        open_mask = np.zeros(n_nodes, dtype=bool)
        cand = [v for v in frontier if counts[v] >= 2 * params.min_node_size]
        if not cand:
            break
        open_mask[cand] = True
        best_gain = np.full(n_nodes, -np.inf)
        best_feat = np.full(n_nodes, -1)
        best_thr = np.zeros(n_nodes)
        res = _best_splits(x, residual, orders, features, node_of, open_mask, params.min_node_size)
        if res is not None:
            nodes, f, g, t = res
            best_gain[nodes] = g
            best_feat[nodes] = f
            best_thr[nodes] = t
        new_frontier = []
        split_of = {}
        for v in cand:
            if best_feat[v] < 0 or not best_gain[v] > params.min_loss_reduction:
                continue
            lid, rid = len(feat), len(feat) + 1
            feat[v], thr[v], left[v], right[v], gain[v] = (
                int(best_feat[v]), float(best_thr[v]), lid, rid, float(best_gain[v]))
            for _ in range(2):
                feat.append(-1); thr.append(0.0); left.append(-1); right.append(-1)
                cover.append(0); gain.append(0.0); depth.append(level + 1)
            split_of[v] = (lid, rid)
            new_frontier += [lid, rid]
        if not split_of:
            break
        nodes_arr = np.array(list(split_of), dtype=np.int64)
        moving = np.isin(node_of, nodes_arr)
        idx = np.flatnonzero(moving)
        cur = node_of[idx]
        f_arr = np.asarray(feat)[cur]
        go_left = x[idx, f_arr] <= np.asarray(thr)[cur]
        node_of[idx] = np.where(go_left, np.asarray(left)[cur], np.asarray(right)[cur])
        counts = np.bincount(node_of, minlength=len(feat))
        for lid, rid in split_of.values():
            cover[lid], cover[rid] = int(counts[lid]), int(counts[rid])
        frontier = new_frontier
    n_nodes = len(feat)
    sums = np.bincount(node_of, weights=residual, minlength=n_nodes)
    counts = np.bincount(node_of, minlength=n_nodes)
    value = np.divide(sums, counts, out=np.zeros(n_nodes), where=counts > 0)
    return Tree(
        feature=np.asarray(feat, dtype=np.int64), threshold=np.asarray(thr),
        left=np.asarray(left, dtype=np.int64), right=np.asarray(right, dtype=np.int64),
        value=value, cover=np.asarray(cover, dtype=np.int64), gain=np.asarray(gain),
        depth=np.asarray(depth, dtype=np.int64),
    )


def _check_xy(x, y=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    if y is not None:
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.size != x.shape[0]:
            raise ValueError("features and target disagree in length")
        if not np.all(np.isfinite(y)):
            raise ValueError("target must be finite")
    return x, y


def fit(features, target, params: GbtParams | None = None) -> TreeEnsemble:
    """Squared-error boosting with per-tree row subsampling."""
    params = params or GbtParams()
    x, y = _check_xy(features, target)
    n, p = x.shape
    if n < 2 * params.min_node_size:
        raise ValueError(f"need at least {2 * params.min_node_size} rows, got {n}")
    rng = np.random.default_rng(params.rng_seed)
    base = float(y.mean())
    pred = np.full(n, base)
    ens = TreeEnsemble(base, params.learning_rate, p)
    n_sub = max(1, int(round(params.row_subsample * n)))
    n_feat = max(1, int(round(params.feature_subsample * p)))
    full_order = [np.argsort(x[:, f], kind="stable") for f in range(p)]
    for _ in range(params.n_trees):
        rows = np.sort(rng.choice(n, size=n_sub, replace=False)) if n_sub < n else np.arange(n)
        feats = np.sort(rng.choice(p, size=n_feat, replace=False)) if n_feat < p else np.arange(p)
        # restrict the global sort orders to the sampled rows (keeps stability)
        local = np.full(n, -1, dtype=np.int64)
        local[rows] = np.arange(rows.size)
        orders = {}
        for f in feats:
            o = local[full_order[f]]
            orders[f] = o[o >= 0]
        resid = y - pred
        tree = fit_tree(x[rows], resid[rows], params, feats, orders)
        pred = pred + params.learning_rate * tree.predict(x)
        ens.trees.append(tree)
        ens.train_loss.append(float(np.mean((y - pred) ** 2)))
    return ens


def predict(ens: TreeEnsemble, features) -> np.ndarray:
    x, _ = _check_xy(features)
    if x.shape[1] != ens.n_features:
        raise ValueError(f"expected {ens.n_features} features, got {x.shape[1]}")
    out = np.full(x.shape[0], ens.base_score)
    for tree in ens.trees:
        out += ens.learning_rate * tree.predict(x)
    return out


@dataclass
class Importance:
    cover: np.ndarray
    frequency: np.ndarray
    gain: np.ndarray
    empty: bool = False


def importance(ens: TreeEnsemble) -> Importance:
    """Per-feature Cover / Frequency / Gain shares (each sums to one)."""
    p = ens.n_features
    cover = np.zeros(p)
    freq = np.zeros(p)
    gain = np.zeros(p)
    for tree in ens.trees:
        inner = tree.feature >= 0
        f = tree.feature[inner]
        np.add.at(cover, f, tree.cover[inner])
        np.add.at(freq, f, 1.0)
        np.add.at(gain, f, tree.gain[inner])
    if freq.sum() == 0:
        return Importance(cover, freq, gain, empty=True)
    return Importance(cover / cover.sum(), freq / freq.sum(), gain / gain.sum())


def r2_rmse(y, yhat) -> tuple[float, float]:
    y = np.asarray(y, dtype=np.float64)
    resid = y - yhat
    sse = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - sse / sst if sst > 0 else float("nan")
    return r2, float(np.sqrt(sse / y.size))


@dataclass
class ReplicateMetrics:
    replicate: int
    structure: str
    r2: float
    rmse: float
    n_train: int
    n_test: int
    feature_names: list[str]
    importance: Importance | None
    error: str = ""


def evaluate_protocol(
    centralities: Mapping[tuple[str, str], np.ndarray],
    replicates: Sequence[tuple[np.ndarray, np.ndarray]],
    params: GbtParams | None = None,
    *,
    structures: Sequence[str] = ("multi", "single"),
    extra_features: Mapping[str, np.ndarray] | None = None,
    include_censored: bool = False,
    train_share: float = 0.1,
    threads: int = 1,
) -> list[ReplicateMetrics]:
    """Fit on a random 10% of each replicate, score R^2 / RMSE on the rest.

    The target is the infection week; never-infected nodes are dropped unless
    ``include_censored`` (then their censoring week is used).
    """
    params = params or GbtParams()
    extra = dict(extra_features or {})

    def one(job):
        j, structure = job
        time, event = replicates[j]
        names = [m for (m, s) in centralities if s == structure]
        cols = [centralities[m, structure] for m in names] + list(extra.values())
        names = names + list(extra)
        x = np.column_stack(cols).astype(np.float64)
        rows = np.arange(time.size) if include_censored else np.flatnonzero(event)
        rng = np.random.default_rng(child_seed(params.rng_seed, "gbt-split", j))
        perm = rng.permutation(rows)
        n_train = int(round(train_share * perm.size))
        train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        p = GbtParams(**{**params.__dict__, "rng_seed": child_seed(params.rng_seed, "gbt", j)})
        try:
            ens = fit(x[train], time[train], p)
        except ValueError as exc:
            return ReplicateMetrics(j, structure, float("nan"), float("nan"),
                                    train.size, test.size, names, None, str(exc))
        r2, rmse = r2_rmse(time[test], predict(ens, x[test]))
        return ReplicateMetrics(j, structure, r2, rmse, train.size, test.size,
                                names, importance(ens))

    jobs = [(j, s) for j in range(len(replicates)) for s in structures]
    if threads <= 1:
        return [one(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, jobs))


def write_metrics(results: Sequence[ReplicateMetrics], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "structure", "r2", "rmse", "n_train", "n_test", "error"])
        for r in results:
            w.writerow([r.replicate, r.structure, repr(float(r.r2)), repr(float(r.rmse)),
                        r.n_train, r.n_test, r.error])


def write_importance(results: Sequence[ReplicateMetrics], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "structure", "feature", "cover", "frequency", "gain"])
        for r in results:
            if r.importance is None:
                continue
            imp = r.importance
            for i, name in enumerate(r.feature_names):
                w.writerow([r.replicate, r.structure, name, repr(float(imp.cover[i])),
                            repr(float(imp.frequency[i])), repr(float(imp.gain[i]))])
