"""Weekly discrete-time SIR on a multiplex with per-layer chain-binomial infection.

Each week every susceptible node is infected with probability
``1 - prod_l (1 - tau_l) ** G_l`` where ``G_l`` counts its neighbours in layer
``l`` that were infected at the end of the previous week.  Infection status is
shared across layers.  A node infected in week ``w`` with recovery time
``gamma`` days recovers in the first week ``w + m`` with ``7 * m > gamma``.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .network import MultiplexNetwork
from .seeding import child_seed

DEFAULT_TAUS = {"family": 0.15, "household": 0.20, "school": 0.10, "work": 0.05}

# log escape used for tau = 1: large enough that one contact means certain
# infection, small enough that sums over layers and neighbours stay finite
_CERTAIN = -1e200


@dataclass
class EpiParams:
    tau_by_layer: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TAUS))
    weibull_shape: float = 1.0
    weibull_scale: float = 5.0
    n_seeds: int = 10
    max_weeks: int = 200
    rng_seed: int = 0

    def __post_init__(self):
        for layer, tau in self.tau_by_layer.items():
            if not 0.0 <= tau <= 1.0:
                raise ValueError(f"tau for layer {layer} must lie in [0, 1], got {tau}")
        if self.weibull_shape <= 0 or self.weibull_scale <= 0:
            raise ValueError("Weibull shape and scale must be positive")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.max_weeks < 1:
            raise ValueError("max_weeks must be >= 1")


@dataclass
class InfectionRecord:
    """Outcome of one simulated epidemic.

    ``infection_week``/``recovery_week`` use -1 for "never".  ``curves`` has
    one row per week ``0..duration`` with columns S, I, R.
    """

    infection_week: np.ndarray
    recovery_week: np.ndarray
    recovery_days: np.ndarray
    curves: np.ndarray
    hit_cap: bool = False
    seed: int = 0

    @property
    def event(self) -> np.ndarray:
        return self.infection_week >= 0

    @property
    def duration(self) -> int:
        return int(self.curves.shape[0] - 1)

    @property
    def censor_week(self) -> int:
        return self.duration

    def survival_times(self) -> tuple[np.ndarray, np.ndarray]:
        """(time, event): infection week, or last simulated week if never infected."""
        event = self.event
        time = np.where(event, self.infection_week, self.censor_week).astype(np.float64)
        return time, event


def reed_frost_prob(taus_and_counts: Sequence[tuple[float, int]]) -> float:
    """Probability of at least one transmission given per-layer (tau, infected count)."""
    escape = 1.0
    for tau, count in taus_and_counts:
        escape *= (1.0 - tau) ** count
    return 1.0 - escape


def transmission_matrix(net: MultiplexNetwork, taus: Mapping[str, float]) -> sp.csr_matrix:
    """Sparse ``W`` with ``W @ infected`` = log escape probability per node."""
    unknown = set(taus) - set(net.layer_names)
    if unknown:
        raise ValueError(f"tau given for unknown layers {sorted(unknown)}")
    w = sp.csr_matrix((net.n_nodes, net.n_nodes))
    for layer in net.layers:
        tau = taus.get(layer.name, 0.0)
        if tau > 0:
            log_escape = _CERTAIN if tau >= 1.0 else np.log1p(-tau)
            w = w + log_escape * layer.adjacency
    return sp.csr_matrix(w)


def simulate(
    net: MultiplexNetwork,
    params: EpiParams,
    *,
    recovery_days: np.ndarray | None = None,
    seeds: np.ndarray | None = None,
    weights: sp.csr_matrix | None = None,
) -> InfectionRecord:
    """Run one epidemic.

    ``recovery_days`` and ``seeds`` override the random draws (used for
    hand-checkable scenarios); ``weights`` lets an ensemble reuse one
    transmission matrix.
    """
    n = net.n_nodes
    if params.n_seeds > n:
        raise ValueError(f"n_seeds ({params.n_seeds}) exceeds number of nodes ({n})")
    rng = np.random.default_rng(params.rng_seed)
    w = transmission_matrix(net, params.tau_by_layer) if weights is None else weights

    if seeds is None:
        seeds = rng.choice(n, size=params.n_seeds, replace=False)
    seeds = np.asarray(seeds, dtype=np.int64)
    if recovery_days is None:
        recovery_days = params.weibull_scale * rng.weibull(params.weibull_shape, size=n)
    gamma = np.asarray(recovery_days, dtype=np.float64)
    # weeks of infectiousness: smallest m >= 1 with 7 m > gamma
    infectious_weeks = np.floor(gamma / 7.0).astype(np.int64) + 1

    inf_week = np.full(n, -1, dtype=np.int64)
    rec_week = np.full(n, -1, dtype=np.int64)
    infected = np.zeros(n, dtype=bool)
    susceptible = np.ones(n, dtype=bool)
    inf_week[seeds] = 0
    infected[seeds] = True
    susceptible[seeds] = False
    due = infectious_weeks  # recovery week for currently infected = inf_week + due

    curves = [(int(susceptible.sum()), int(infected.sum()), 0)]
    recovered = 0
    week = 0
    hit_cap = False
    while curves[-1][1] > 0:
        if week >= params.max_weeks:
            hit_cap = True
            break
        week += 1
        log_escape = w @ infected.astype(np.float64)
        p = -np.expm1(log_escape)
        draws = rng.random(n)
        new = susceptible & (draws < p)
        recovering = infected & (inf_week + due == week)
        rec_week[recovering] = week
        infected &= ~recovering
        recovered += int(recovering.sum())
        inf_week[new] = week
        infected |= new
        susceptible &= ~new
        curves.append((int(susceptible.sum()), int(infected.sum()), recovered))

    return InfectionRecord(
        infection_week=inf_week,
        recovery_week=rec_week,
        recovery_days=gamma,
        curves=np.asarray(curves, dtype=np.int64),
        hit_cap=hit_cap,
        seed=params.rng_seed,
    )


def run_ensemble(
    net: MultiplexNetwork, params: EpiParams, k: int, threads: int = 1
) -> list[InfectionRecord]:
    """``k`` independent replicates; replicate ``j`` uses ``child_seed(rng_seed, "epidemic", j)``.

    Output is independent of ``threads``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    w = transmission_matrix(net, params.tau_by_layer)

    def one(j: int) -> InfectionRecord:
        p = EpiParams(**{**params.__dict__, "rng_seed": child_seed(params.rng_seed, "epidemic", j)})
        return simulate(net, p, weights=w)

    if threads <= 1:
        return [one(j) for j in range(k)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(k)))


SUMMARY_ROWS = (
    "duration_weeks",
    "nodes_infected_pct",
    "mean_time_to_infection_weeks",
    "infected_at_peak_pct",
    "peak_week",
    "infections_per_node_pct",
)


def _five(x) -> list[float]:
    x = np.asarray(x, dtype=np.float64)
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return [float(x.min()), float(x.mean()), float(np.median(x)), float(x.max()), sd]


def epidemic_summary(records: Sequence[InfectionRecord]) -> dict[str, list[float]]:
    """Min/mean/median/max/SD across replicates (across nodes for the last row)."""
    if not records:
        raise ValueError("need at least one record")
    n = records[0].infection_week.size
    duration, pct, tti, peak_pct, peak_week = [], [], [], [], []
    freq = np.zeros(n)
    for rec in records:
        ev = rec.event
        duration.append(rec.duration)
        pct.append(100.0 * ev.sum() / n)
        tti.append(rec.infection_week[ev].mean())
        i_curve = rec.curves[:, 1]
        peak_pct.append(100.0 * i_curve.max() / n)
        peak_week.append(int(np.argmax(i_curve)))
        freq += ev
    freq = 100.0 * freq / len(records)
    values = [duration, pct, tti, peak_pct, peak_week, freq]
    return {name: _five(v) for name, v in zip(SUMMARY_ROWS, values)}


def write_records(net: MultiplexNetwork, records: Sequence[InfectionRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("replicate,node_id,infection_week,recovery_week,event\n")
        for j, rec in enumerate(records):
            _write_block(fh, j, net.node_ids, rec)


def _write_block(fh, j, ids, rec) -> None:
    def cell(v):
        return "" if v < 0 else str(int(v))

    lines = [
        f"{j},{int(i)},{cell(a)},{cell(b)},{int(a >= 0)}\n"
        for i, a, b in zip(ids, rec.infection_week, rec.recovery_week)
    ]
    fh.writelines(lines)


def write_curves(records: Sequence[InfectionRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("replicate,week,S,I,R\n")
        for j, rec in enumerate(records):
            for week, (s, i, r) in enumerate(rec.curves):
                fh.write(f"{j},{week},{s},{i},{r}\n")


def write_summary(summary: Mapping[str, list[float]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "min", "mean", "median", "max", "sd"])
        for name, vals in summary.items():
            w.writerow([name] + [repr(float(v)) for v in vals])


def read_records(
    path: Path, node_ids: np.ndarray, durations: Sequence[int] | None = None
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per replicate ``(time, event)`` arrays aligned to ``node_ids``.

    Time is the infection week for events.  Never-infected nodes are censored
    at the replicate's duration (from the weekly curves) when ``durations`` is
    given, else at the last week that appears in the file.
    """
    import pandas as pd

    df = pd.read_csv(path, float_precision="round_trip")
    need = {"replicate", "node_id", "infection_week", "recovery_week", "event"}
    if need - set(df.columns):
        raise ValueError(f"{path}: missing columns {sorted(need - set(df.columns))}")
    out = []
    for j, (_, g) in enumerate(df.groupby("replicate", sort=True)):
        g = g.set_index("node_id").reindex(node_ids)
        if g["event"].isna().any():
            raise ValueError(f"{path}: replicate does not cover every node")
        event = g["event"].to_numpy(dtype=bool)
        inf = g["infection_week"].to_numpy(dtype=np.float64)
        rec = g["recovery_week"].to_numpy(dtype=np.float64)
        last = durations[j] if durations is not None else np.nanmax(np.concatenate([inf, rec]))
        time = np.where(event, inf, last)
        out.append((time, event))
    return out


def read_durations(path: Path) -> list[int]:
    """Last week per replicate from a ``replicate,week,S,I,R`` curves file."""
    import pandas as pd

    df = pd.read_csv(path, float_precision="round_trip")
    return [int(v) for v in df.groupby("replicate", sort=True)["week"].max()]
