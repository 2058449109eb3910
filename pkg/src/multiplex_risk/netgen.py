"""Synthetic registry-like four-layer population networks.

Construction mirrors a school-rooted registry extract: students are grouped
into fully connected school years, each student belongs to a family
(parents plus full siblings) and a household clique, and every employed adult
is placed in a workplace where colleague ties are capped per person and then
made reciprocal.  Workplaces are filled up with outside workers, who only
appear in the work layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

from .network import MultiplexNetwork, from_index_edges, aggregate, n_components


class GenParamsError(ValueError):
    pass


@dataclass(frozen=True)
class IntDist:
    """Integer distribution with support >= ``minimum``.

    Text form (used in config files): ``const:5``, ``poisson:3.3`` (shifted so
    the mean is the given value), ``lognormal:60,0.9`` (median, sigma; rounded)
    or ``choice:1=0.5,2=0.3,3=0.2``.
    """

    kind: str
    params: tuple
    minimum: int = 1

    def __post_init__(self):
        if self.kind == "const":
            ok = self.params[0] >= self.minimum
        elif self.kind == "poisson":
            ok = self.params[0] >= self.minimum
        elif self.kind == "lognormal":
            ok = self.params[0] > 0 and self.params[1] >= 0
        elif self.kind == "choice":
            values, probs = self.params
            ok = (
                len(values) > 0
                and min(values) >= self.minimum
                and all(p >= 0 for p in probs)
                and sum(probs) > 0
            )
        else:
            raise GenParamsError(f"unknown distribution kind {self.kind!r}")
        if not ok:
            raise GenParamsError(f"degenerate distribution {self}")

    @classmethod
    def parse(cls, text: str | int | "IntDist", minimum: int = 1) -> "IntDist":
        if isinstance(text, IntDist):
            return text
        if isinstance(text, (int, np.integer)):
            return cls("const", (int(text),), minimum)
        kind, _, rest = str(text).strip().partition(":")
        kind = kind.strip()
        try:
            if kind == "const":
                return cls(kind, (int(rest),), minimum)
            if kind == "poisson":
                return cls(kind, (float(rest),), minimum)
            if kind == "lognormal":
                median, sigma = (float(v) for v in rest.split(","))
                return cls(kind, (median, sigma), minimum)
            if kind == "choice":
                values, probs = [], []
                for item in rest.split(","):
                    v, p = item.split("=")
                    values.append(int(v))
                    probs.append(float(p))
                return cls(kind, (tuple(values), tuple(probs)), minimum)
        except ValueError as exc:
            raise GenParamsError(f"cannot parse distribution {text!r}") from exc
        raise GenParamsError(f"unknown distribution kind {kind!r}")

    def __str__(self) -> str:
        if self.kind == "choice":
            values, probs = self.params
            return "choice:" + ",".join(f"{v}={p!r}" for v, p in zip(values, probs))
        return f"{self.kind}:" + ",".join(repr(p) if isinstance(p, float) else str(p) for p in self.params)

    def mean(self) -> float:
        if self.kind in ("const", "poisson"):
            return float(self.params[0])
        if self.kind == "lognormal":
            median, sigma = self.params
            return max(float(self.minimum), median * np.exp(sigma**2 / 2))
        values, probs = self.params
        p = np.asarray(probs) / np.sum(probs)
        return float(np.dot(values, p))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        m = self.minimum
        if self.kind == "const":
            return np.full(size, self.params[0], dtype=np.int64)
        if self.kind == "poisson":
            return m + rng.poisson(self.params[0] - m, size=size).astype(np.int64)
        if self.kind == "lognormal":
            median, sigma = self.params
            x = np.rint(rng.lognormal(np.log(median), sigma, size=size)).astype(np.int64)
            return np.maximum(x, m)
        values, probs = self.params
        p = np.asarray(probs, dtype=np.float64)
        return rng.choice(np.asarray(values, dtype=np.int64), size=size, p=p / p.sum())


def _dist_field(default: str, minimum: int = 1):
    return field(default_factory=lambda: IntDist.parse(default, minimum))


@dataclass
class GenParams:
    """Generator settings.  Defaults give per-layer mean degrees close to
    family 2.4, household 3.3, school 48 and work 81."""

    n_students: int = 3000
    school_year_size: IntDist = _dist_field("poisson:48")
    children_per_family: IntDist = _dist_field("choice:1=0.45,2=0.4,3=0.12,4=0.03")
    two_parent_share: float = 0.9
    cohabit_share: float = 0.8
    household_size: IntDist = _dist_field("choice:2=0.05,3=0.3,4=0.4,5=0.2,6=0.05")
    employment_rate: float = 0.8
    workplace_size: IntDist = _dist_field("lognormal:40,0.8")
    insiders_per_workplace: IntDist = _dist_field("poisson:4")
    multi_job_share: float = 0.05
    work_degree_cap: int = 100
    with_adults: bool = True
    bridge: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, str) and f.name in _DIST_FIELDS:
                setattr(self, f.name, IntDist.parse(v))
        if self.n_students < 1:
            raise GenParamsError("n_students must be >= 1")
        if self.work_degree_cap < 1:
            raise GenParamsError("work_degree_cap must be >= 1")
        for name in ("two_parent_share", "cohabit_share", "employment_rate", "multi_job_share"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise GenParamsError(f"{name} must be in [0, 1]")


_DIST_FIELDS = {
    "school_year_size", "children_per_family", "household_size",
    "workplace_size", "insiders_per_workplace",
}


def enforce_reciprocity(directed_pairs: Iterable[tuple[int, int]] | np.ndarray) -> np.ndarray:
    """Undirected closure of directed pairs as sorted unique (i < j) rows."""
    pairs = np.asarray(directed_pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return pairs
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return np.unique(np.column_stack([lo, hi]), axis=0)


def clique_edges(members: np.ndarray) -> np.ndarray:
    members = np.asarray(members, dtype=np.int64)
    i, j = np.triu_indices(members.size, k=1)
    return np.column_stack([members[i], members[j]])


def sample_colleagues(
    members: np.ndarray, cap: int, rng: np.random.Generator, chunk: int = 512
) -> np.ndarray:
    """Directed colleague pairs: each member picks ``min(s - 1, cap)`` others
    uniformly without replacement."""
    members = np.asarray(members, dtype=np.int64)
    s = members.size
    if s < 2:
        return np.empty((0, 2), dtype=np.int64)
    if s - 1 <= cap:
        i, j = np.nonzero(~np.eye(s, dtype=bool))
        return np.column_stack([members[i], members[j]])
    out = []
    for start in range(0, s, chunk):
        rows = np.arange(start, min(start + chunk, s))
        keys = rng.random((rows.size, s))
        keys[np.arange(rows.size), rows] = 2.0
        picked = np.argpartition(keys, cap - 1, axis=1)[:, :cap]
        picked.sort(axis=1)
        out.append(np.column_stack([np.repeat(members[rows], cap), members[picked.ravel()]]))
    return np.concatenate(out)


@dataclass
class _Builder:
    n: int = 0
    edges: dict = field(default_factory=lambda: {k: [] for k in ("family", "household", "school", "work")})

    def new_nodes(self, k: int) -> np.ndarray:
        ids = np.arange(self.n, self.n + k, dtype=np.int64)
        self.n += k
        return ids

    def add(self, layer: str, pairs: np.ndarray) -> None:
        if len(pairs):
            self.edges[layer].append(np.asarray(pairs, dtype=np.int64).reshape(-1, 2))

    def stacked(self) -> dict[str, np.ndarray]:
        return {
            k: (np.concatenate(v) if v else np.empty((0, 2), dtype=np.int64))
            for k, v in self.edges.items()
        }


def generate(params: GenParams) -> MultiplexNetwork:
    """Generate a four-layer multiplex; identical output for identical params."""
    rng = np.random.default_rng(params.rng_seed)
    b = _Builder()
    students = b.new_nodes(params.n_students)

    # school years: consecutive blocks of a shuffled student order
    order = rng.permutation(students)
    pos = 0
    while pos < order.size:
        size = int(params.school_year_size.sample(rng, 1)[0])
        b.add("school", clique_edges(np.sort(order[pos:pos + size])))
        pos += size

    # families of full siblings
    order = rng.permutation(students)
    families = []
    pos = 0
    while pos < order.size:
        c = int(params.children_per_family.sample(rng, 1)[0])
        families.append(np.sort(order[pos:pos + c]))
        pos += c

    adults: list[np.ndarray] = []
    for kids in families:
        b.add("family", clique_edges(kids))
        household = list(kids)
        if params.with_adults:
            n_par = 2 if rng.random() < params.two_parent_share else 1
            parents = b.new_nodes(n_par)
            adults.append(parents)
            b.add("family", np.array([(p, k) for p in parents for k in kids]))
            if n_par == 2 and rng.random() >= params.cohabit_share:
                household.append(parents[0])
            else:
                household.extend(parents)
            target = int(params.household_size.sample(rng, 1)[0])
            extra = target - len(household)
            if extra > 0:
                residents = b.new_nodes(extra)
                adults.append(residents)
                household.extend(residents)
        b.add("household", clique_edges(np.array(household)))

    if params.with_adults and adults:
        _workplaces(b, np.concatenate(adults), params, rng)

    net = from_index_edges(b.n, b.stacked())
    if params.bridge:
        net = _bridge(net, rng)
    return net


def _workplaces(b: _Builder, adults: np.ndarray, params: GenParams, rng) -> None:
    employed = adults[rng.random(adults.size) < params.employment_rate]
    employed = rng.permutation(employed)
    workers: list[np.ndarray] = []
    pos = 0
    while pos < employed.size:
        size = int(params.workplace_size.sample(rng, 1)[0])
        k = int(params.insiders_per_workplace.sample(rng, 1)[0])
        k = min(k, size, employed.size - pos)
        insiders = employed[pos:pos + k]
        pos += k
        # some open positions go to people already working elsewhere
        n_shared = rng.binomial(size - k, params.multi_job_share) if workers else 0
        shared = np.empty(0, dtype=np.int64)
        if n_shared:
            pool = np.concatenate(workers)
            shared = np.unique(pool[rng.integers(0, pool.size, size=n_shared)])
        outsiders = b.new_nodes(size - k - shared.size)
        members = np.concatenate([insiders, shared, outsiders])
        workers.append(np.concatenate([insiders, outsiders]))
        directed = sample_colleagues(members, params.work_degree_cap, rng)
        b.add("work", enforce_reciprocity(directed))


def _bridge(net: MultiplexNetwork, rng: np.random.Generator) -> MultiplexNetwork:
    """Attach every non-giant aggregate component to the giant one with a
    single work tie, so the aggregate network is connected."""
    agg = aggregate(net)
    n_comp, labels = n_components(agg)
    if n_comp <= 1:
        return net
    sizes = np.bincount(labels)
    giant = int(np.argmax(sizes))
    giant_nodes = np.flatnonzero(labels == giant)
    work = net.layer("work")
    workers = giant_nodes[work.degrees()[giant_nodes] > 0]
    pool = workers if workers.size else giant_nodes
    # representative = lowest index in each component, ordered by that index
    first = np.full(n_comp, net.n_nodes, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(net.n_nodes))
    reps = np.sort(first[np.arange(n_comp) != giant])
    targets = pool[rng.integers(0, pool.size, size=reps.size)]
    extra = np.column_stack([reps, targets])
    edges = {layer.name: layer.edges() for layer in net.layers}
    edges["work"] = np.concatenate([edges["work"], extra])
    return from_index_edges(net.n_nodes, edges, net.node_ids)
