"""Centrality as a predictor of infection: rank correlations, Cox models, C-index.

The Cox fit maximises the Efron-approximated partial likelihood (weekly time
grids produce heavy ties).  Concordance uses inverse-probability-of-censoring
weights from the Kaplan-Meier estimate of the censoring distribution.
"""
from __future__ import annotations

import csv
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)


class SurvivalError(ValueError):
    """Invalid input for a survival computation."""


class CoxFitError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# rank correlation and Fisher-z averaging

def spearman_rho(x, y) -> float:
    """Pearson correlation of mid-ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise SurvivalError("spearman_rho needs two 1-d vectors of equal length")
    if x.size < 2:
        raise SurvivalError("spearman_rho needs at least two observations")
    rx = rankdata(x)
    ry = rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sx = np.sqrt(rx @ rx)
    sy = np.sqrt(ry @ ry)
    if sx == 0 or sy == 0:
        raise SurvivalError("correlation undefined for a constant vector")
    return float(np.clip((rx @ ry) / (sx * sy), -1.0, 1.0))


@dataclass
class FisherMean:
    mean: float
    ci_low: float
    ci_high: float
    k: int


def fisher_z_mean(values, kind: str = "correlation") -> FisherMean:
    """Average correlation-like values on the atanh scale with a 95% CI.

    ``kind="cindex"`` maps C to ``2C - 1`` before transforming and back after.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise SurvivalError("fisher_z_mean needs at least one value")
    if kind == "cindex":
        v = 2.0 * v - 1.0
    elif kind != "correlation":
        raise SurvivalError(f"unknown kind {kind!r}")
    if np.any(np.abs(v) >= 1.0) or not np.all(np.isfinite(v)):
        raise SurvivalError("values must lie strictly inside the open interval")
    z = np.arctanh(v)
    zm = z.mean()
    half = 1.96 * z.std(ddof=1) / np.sqrt(z.size) if z.size > 1 else 0.0
    lo, mid, hi = np.tanh([zm - half, zm, zm + half])
    if kind == "cindex":
        lo, mid, hi = (lo + 1) / 2, (mid + 1) / 2, (hi + 1) / 2
    return FisherMean(float(mid), float(lo), float(hi), int(v.size))


# ---------------------------------------------------------------------------
# Kaplan-Meier and concordance

@dataclass
class StepFunction:
    """Right-continuous step function: ``y[k]`` holds on ``[x[k], x[k+1])``."""

    x: np.ndarray
    y: np.ndarray

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.x.size == 0:
            return np.ones_like(t)
        idx = np.searchsorted(self.x, t, side="right") - 1
        return np.where(idx >= 0, self.y[np.maximum(idx, 0)], 1.0)


def kaplan_meier(times, events) -> StepFunction:
    """Product-limit survival estimate; value 1 before the first event."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    if times.size == 0:
        raise SurvivalError("kaplan_meier needs at least one observation")
    uniq, inv = np.unique(times, return_inverse=True)
    deaths = np.bincount(inv, weights=events, minlength=uniq.size)
    counts = np.bincount(inv, minlength=uniq.size)
    at_risk = counts[::-1].cumsum()[::-1]
    keep = deaths > 0
    surv = np.cumprod(1.0 - deaths[keep] / at_risk[keep])
    return StepFunction(uniq[keep], surv)


@dataclass
class Concordance:
    cindex: float
    weighted_pairs: float
    n_pairs: int
    n_excluded: int


def concordance(risk, times, events, tau: float | None = None, ipcw: bool = True) -> Concordance:
    """Concordance of ``risk`` with event order.

    Pairs (i, j) are comparable when ``t_i < t_j``, ``t_i < tau`` and i had
    the event; each is weighted by ``1 / G(t_i)**2`` with ``G`` the censoring
    Kaplan-Meier curve (or 1 when ``ipcw`` is false).  Risk ties count one half.
    Events with ``G(t_i) = 0`` are dropped and counted in ``n_excluded``.
    """
    risk = np.asarray(risk, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    n = risk.size
    if not (times.size == n and events.size == n):
        raise SurvivalError("risk, times and events must have equal length")
    if tau is None:
        tau = np.inf
    if ipcw:
        g = kaplan_meier(times, ~events)(times)
    else:
        g = np.ones(n)

    t_uniq, t_grp = np.unique(times, return_inverse=True)
    r_uniq, r_rank = np.unique(risk, return_inverse=True)
    cnt = np.zeros(r_uniq.size, dtype=np.float64)

    anchor = events & (times < tau)
    excluded = anchor & (g <= 0)
    anchor &= ~excluded
    weight = np.zeros(n)
    weight[anchor] = 1.0 / g[anchor] ** 2

    order = np.argsort(-t_grp, kind="stable")
    bounds = np.flatnonzero(np.diff(t_grp[order])) + 1
    groups = np.split(order, bounds)

    num = 0.0
    den = 0.0
    n_pairs = 0
    inserted = 0
    for members in groups:  # descending time; cnt holds strictly later times
        a = members[anchor[members]]
        if a.size and inserted:
            below = np.concatenate([[0.0], np.cumsum(cnt)])
            ra = r_rank[a]
            conc = below[ra] + 0.5 * cnt[ra]
            num += float(weight[a] @ conc)
            den += float(weight[a].sum() * inserted)
            n_pairs += int(a.size * inserted)
        np.add.at(cnt, r_rank[members], 1.0)
        inserted += members.size
    if n_pairs == 0:
        raise SurvivalError("no comparable pairs: concordance undefined")
    return Concordance(num / den, den, n_pairs, int(excluded.sum()))


def uno_c_index(risk, times, events, tau: float | None = None) -> float:
    """Censoring-weighted (Uno) concordance index."""
    return concordance(risk, times, events, tau, ipcw=True).cindex


# ---------------------------------------------------------------------------
# Cox proportional hazards

@dataclass
class SurvivalDataset:
    time: np.ndarray
    event: np.ndarray
    features: np.ndarray
    names: list[str]

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=np.float64)
        self.event = np.asarray(self.event, dtype=bool)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(self.time.size, -1)
        if np.any(self.time < 0):
            raise SurvivalError("negative survival time")
        if not np.all(np.isfinite(self.features)):
            raise SurvivalError("non-finite feature values")
        if self.features.shape[1] != len(self.names):
            raise SurvivalError("feature names do not match columns")


@dataclass
class CoxFit:
    names: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    gradient_norm: float
    center: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)

    def risk(self, features: np.ndarray) -> np.ndarray:
        """Linear predictor on new data, using the fit's standardisation."""
        z = (np.asarray(features, dtype=np.float64) - self.center) / self.scale
        return z @ self.coefficients


@dataclass
class _TieLayout:
    """Rows sorted by descending time (events first within a time).

    Group ``g`` spans sorted rows ``[start[g], stop[g])``.  Event rows are
    listed in ``ev_rows``; those of the ``i``-th group with events start at
    ``ev_seg[i]`` in that list.  ``frac`` is the Efron fraction ``r/d`` of
    each event row and ``ev_group`` its group.
    """

    order: np.ndarray
    start: np.ndarray
    row_group: np.ndarray
    ev_rows: np.ndarray
    ev_group: np.ndarray
    ev_groups: np.ndarray
    ev_seg: np.ndarray
    frac: np.ndarray


def _time_groups(time: np.ndarray, event: np.ndarray) -> _TieLayout:
    order = np.lexsort((~event, -time))
    t = time[order]
    ev = event[order]
    start = np.flatnonzero(np.r_[True, t[1:] != t[:-1]])
    stop = np.r_[start[1:], t.size]
    n_ev = np.add.reduceat(ev.astype(np.int64), start) if t.size else np.zeros(0, np.int64)
    row_group = np.repeat(np.arange(start.size), stop - start)
    ev_rows = np.flatnonzero(ev)
    ev_group = row_group[ev_rows]
    ev_groups = np.flatnonzero(n_ev)
    ev_seg = np.r_[0, np.cumsum(n_ev[ev_groups])[:-1]].astype(np.int64)
    frac = (ev_rows - start[ev_group]) / n_ev[ev_group] if ev_rows.size else np.zeros(0)
    return _TieLayout(order, start, row_group, ev_rows, ev_group, ev_groups, ev_seg, frac)


def _efron_terms(beta, x, lay: _TieLayout, xe=None):
    """Log partial likelihood, gradient and Hessian (Efron ties).

    ``x`` must already be in ``lay.order``; ``xe`` caches ``x[lay.ev_rows]``.
    Returns ``-inf`` likelihood when the linear predictor under/overflows.
    """
    if xe is None:
        xe = x[lay.ev_rows]
    with np.errstate(all="ignore"):
        out = _efron_raw(beta, x, lay, xe)
    if not np.isfinite(out[0]) or not np.all(np.isfinite(out[2])):
        return -np.inf, out[1], out[2]
    return out


def _efron_raw(beta, x, lay: _TieLayout, xe):
    # Risk-set sums are prefix sums of per-group totals; every per-group
    # weighted sum of outer products folds into one X^T diag(c) X product.
    p = x.shape[1]
    n_groups = lay.start.size
    if lay.ev_rows.size == 0:
        return 0.0, np.zeros(p), np.zeros((p, p))
    eta = x @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    wx = x * w[:, None]
    s0 = np.cumsum(np.add.reduceat(w, lay.start))
    s1 = np.cumsum(np.add.reduceat(wx, lay.start, axis=0), axis=0)
    we = w[lay.ev_rows]
    wxe = xe * we[:, None]
    e0 = np.zeros(n_groups)
    e1 = np.zeros((n_groups, p))
    e0[lay.ev_groups] = np.add.reduceat(we, lay.ev_seg)
    e1[lay.ev_groups] = np.add.reduceat(wxe, lay.ev_seg, axis=0)

    g, f = lay.ev_group, lay.frac
    den = s0[g] - f * e0[g]
    inv = 1.0 / den
    inv2 = inv * inv
    a0 = np.bincount(g, inv, n_groups)
    a1 = np.bincount(g, f * inv, n_groups)
    b0 = np.bincount(g, inv2, n_groups)
    b1 = np.bincount(g, f * inv2, n_groups)
    b2 = np.bincount(g, f * f * inv2, n_groups)

    xe_sum = xe.sum(axis=0)
    loglik = xe_sum @ beta - shift * g.size - np.log(den).sum()
    grad = xe_sum - (a0 @ s1 - a1 @ e1)
    # row i sits in the risk set of its own group and every later one
    c_row = np.cumsum(a0[::-1])[::-1][lay.row_group]
    s2_part = x.T @ (wx * c_row[:, None])
    e2_part = xe.T @ (wxe * a1[g][:, None])
    cross = (s1 * b1[:, None]).T @ e1
    outer = (s1 * b0[:, None]).T @ s1 - (cross + cross.T) + (e1 * b2[:, None]).T @ e1
    hess = -(s2_part - e2_part - outer)
    return loglik, grad, hess


def fit_cox(
    data: SurvivalDataset,
    *,
    max_iter: int = 100,
    grad_tol: float = 1e-8,
    rel_tol: float = 1e-10,
    beta_limit: float = 1e4,
    separation_limit: float = 20.0,
) -> CoxFit:
    """Newton-Raphson fit of the Efron partial likelihood with step halving.

    Columns are standardised before fitting; coefficients are reported on
    that scale.

    Raises:
        SurvivalError: no events, or a constant column.
        CoxFitError: non-convergence or diverging coefficients (monotone
            likelihood); ``diagnostics`` holds the last state.  A standardised
            coefficient beyond ``separation_limit`` (a hazard ratio above
            e**20 per SD) is treated as divergence.
    """
    x = data.features
    if not data.event.any():
        raise SurvivalError("Cox fit needs at least one event")
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    const = scale <= 1e-12 * np.maximum(1.0, np.abs(center))
    if const.any():
        bad = [data.names[i] for i in np.flatnonzero(const)]
        raise SurvivalError(f"constant feature column(s): {bad}")
    z = (x - center) / scale
    layout = _time_groups(data.time, data.event)
    zs = z[layout.order]
    ze = zs[layout.ev_rows]
    p = z.shape[1]
    beta = np.zeros(p)
    loglik, grad, hess = _efron_terms(beta, zs, layout, ze)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < grad_tol:
            converged = True
            it -= 1
            break
        info = -hess
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        new_beta = beta + step
        new = _efron_terms(new_beta, zs, layout, ze)
        halvings = 0
        while not new[0] >= loglik and halvings < 30:
            step /= 2.0
            new_beta = beta + step
            new = _efron_terms(new_beta, zs, layout, ze)
            halvings += 1
        if not new[0] >= loglik:
            break
        rel = abs(new[0] - loglik) / max(abs(loglik), 1e-300)
        beta = new_beta
        loglik, grad, hess = new
        if np.linalg.norm(beta) > beta_limit:
            raise CoxFitError(
                "coefficients diverge (monotone likelihood / separation)",
                {"beta": beta, "iterations": it, "loglik": loglik},
            )
        if np.max(np.abs(grad)) < grad_tol:
            converged = True
            break
        if rel < rel_tol:
            # the likelihood has flattened to round-off; one more full Newton
            # step drives the gradient down as well
            converged = True
            try:
                polish = beta + np.linalg.solve(-hess, grad)
                new = _efron_terms(polish, zs, layout, ze)
                if np.max(np.abs(new[1])) < np.max(np.abs(grad)):
                    beta = polish
                    loglik, grad, hess = new
            except np.linalg.LinAlgError:
                pass
            break
    gnorm = float(np.max(np.abs(grad)))
    if np.max(np.abs(beta)) > separation_limit:
        raise CoxFitError(
            "coefficients diverge (monotone likelihood / separation)",
            {"beta": beta, "iterations": it, "loglik": loglik},
        )
    if not converged:
        raise CoxFitError(
            f"Cox fit did not converge in {max_iter} iterations",
            {"beta": beta, "gradient_norm": gnorm, "loglik": loglik},
        )
    try:
        cov = np.linalg.inv(-hess)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        se = np.full(p, np.nan)
    return CoxFit(
        names=list(data.names), coefficients=beta, standard_errors=se,
        log_likelihood=float(loglik), iterations=it, converged=True,
        gradient_norm=gnorm, center=center, scale=scale,
    )


def log_partial_likelihood(beta, data: SurvivalDataset, standardize: bool = True) -> float:
    """Efron log partial likelihood at ``beta`` (on the standardised scale)."""
    x = data.features
    if standardize:
        x = (x - x.mean(axis=0)) / x.std(axis=0)
    layout = _time_groups(data.time, data.event)
    return float(_efron_terms(np.atleast_1d(beta), x[layout.order], layout)[0])


# ---------------------------------------------------------------------------
# predictor grid

_FEATURE_ALIASES = {
    "degree": "degree", "deg": "degree", "d": "degree",
    "eigenvector": "eigenvector", "eig": "eigenvector", "e": "eigenvector",
    "pagerank": "pagerank", "pr": "pagerank", "p": "pagerank",
}


@dataclass(frozen=True)
class ModelSpec:
    """A sum of terms, each term a product of ``(feature, power)`` factors."""

    id: int
    terms: tuple[tuple[tuple[str, int], ...], ...]

    def __post_init__(self):
        for term in self.terms:
            if not term or len(term) > 3:
                raise SurvivalError(f"model {self.id}: terms need 1 to 3 factors")
            for _, power in term:
                if power not in (1, 2, 3):
                    raise SurvivalError(f"model {self.id}: powers must be 1, 2 or 3")

    @property
    def features(self) -> list[str]:
        seen = []
        for term in self.terms:
            for name, _ in term:
                if name not in seen:
                    seen.append(name)
        return seen

    def column_names(self) -> list[str]:
        return [_term_name(t) for t in self.terms]

    @classmethod
    def parse(cls, model_id: int, text: str) -> "ModelSpec":
        terms = []
        for raw in text.split("+"):
            raw = raw.strip()
            if not raw:
                raise SurvivalError(f"model {model_id}: empty term in {text!r}")
            factors = []
            for f in raw.split("*"):
                m = re.fullmatch(r"\s*([A-Za-z_]+)\s*(?:\^\s*(\d+))?\s*", f)
                if not m:
                    raise SurvivalError(f"model {model_id}: cannot parse factor {f!r}")
                name = _FEATURE_ALIASES.get(m.group(1).lower(), m.group(1).lower())
                factors.append((name, int(m.group(2) or 1)))
            terms.append(tuple(factors))
        return cls(model_id, tuple(terms))


def _term_name(term) -> str:
    return "*".join(name if power == 1 else f"{name}^{power}" for name, power in term)


def standardize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd == 0:
        raise SurvivalError("cannot standardise a constant feature")
    return (x - x.mean()) / sd


def expand_model(spec: ModelSpec, centralities: Mapping[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    """Design matrix of ``spec`` built from standardised base features."""
    base = {}
    for name in spec.features:
        if name not in centralities:
            raise SurvivalError(f"unknown feature {name!r} in model {spec.id}")
        base[name] = standardize(centralities[name])
    cols = []
    for term in spec.terms:
        col = np.ones_like(next(iter(base.values())))
        for name, power in term:
            col = col * base[name] ** power
        cols.append(col)
    return spec.column_names(), np.column_stack(cols)


def load_grid(path: Path) -> list[ModelSpec]:
    """Parse ``id: term + term`` lines; ``#`` starts a comment."""
    specs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            head, sep, body = line.partition(":")
            if not sep or not head.strip().isdigit():
                raise SurvivalError(f"{path}:{lineno}: expected 'id: terms'")
            specs.append(ModelSpec.parse(int(head), body))
    return specs


def default_grid_path() -> Path:
    return Path(__file__).with_name("data") / "cox_grid.txt"


# ---------------------------------------------------------------------------
# ensemble evaluation

@dataclass
class GridResult:
    model: int
    structure: str
    cindex: FisherMean | None
    n_failed: int
    errors: list[str] = field(default_factory=list)


def _fit_and_score(spec, feats, time, event, tau):
    names, x = expand_model(spec, feats)
    fit = fit_cox(SurvivalDataset(time, event, x, names))
    return uno_c_index(fit.risk(x), time, event, tau)


def evaluate_grid(
    centralities: Mapping[tuple[str, str], np.ndarray],
    replicates: Sequence[tuple[np.ndarray, np.ndarray]],
    specs: Sequence[ModelSpec],
    structures: Sequence[str] = ("multi", "single"),
    tau: float | None = None,
    threads: int = 1,
) -> list[GridResult]:
    """Fit every model on every replicate and Fisher-z average Uno's C.

    ``replicates`` holds ``(time, event)`` per simulated epidemic.  ``tau``
    defaults to the largest event time across all replicates.  A failing fit
    is logged and counted, never fatal.
    """
    if tau is None:
        tau = max(float(t[e].max()) for t, e in replicates if e.any())
        tau = np.nextafter(tau, np.inf)
    jobs = [(spec, s) for s in structures for spec in specs]

    def run(job):
        spec, structure = job
        feats = {m: v for (m, st), v in centralities.items() if st == structure}
        values, errors = [], []
        for time, event in replicates:
            try:
                values.append(_fit_and_score(spec, feats, time, event, tau))
            except (SurvivalError, CoxFitError) as exc:
                errors.append(str(exc))
        if errors:
            log.warning("model %d (%s): %d failed fits", spec.id, structure, len(errors))
        summary = None
        if values:
            try:
                summary = fisher_z_mean(values, "cindex")
            except SurvivalError as exc:
                errors.append(str(exc))
        return GridResult(spec.id, structure, summary, len(errors), errors)

    if threads <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))


def timing_correlations(
    centralities: Mapping[tuple[str, str], np.ndarray],
    replicates: Sequence[tuple[np.ndarray, np.ndarray]],
) -> dict[tuple[str, str], FisherMean]:
    """Per-replicate Spearman rho of centrality vs infection week (infected
    nodes only), Fisher-z averaged."""
    out = {}
    for key, score in centralities.items():
        rhos = [spearman_rho(score[e], t[e]) for t, e in replicates if e.sum() > 1]
        out[key] = fisher_z_mean(rhos, "correlation")
    return out


def centrality_correlations(
    centralities: Mapping[tuple[str, str], np.ndarray],
) -> dict[tuple[tuple[str, str], tuple[str, str]], float]:
    """Spearman rho between every pair of centrality vectors (lower triangle)."""
    keys = list(centralities)
    out = {}
    for i, a in enumerate(keys):
        for b in keys[: i + 1]:
            out[a, b] = spearman_rho(centralities[a], centralities[b])
    return out


def write_correlations(between, timing, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["analysis", "measure_a", "structure_a", "measure_b", "structure_b",
                    "rho", "ci_low", "ci_high", "k"])
        for (a, b), rho in between.items():
            w.writerow(["centrality", *a, *b, repr(float(rho)), repr(float(rho)), repr(float(rho)), 1])
        for a, fm in timing.items():
            w.writerow(["time_to_infection", *a, "time", "", repr(float(fm.mean)),
                        repr(float(fm.ci_low)), repr(float(fm.ci_high)), fm.k])


def write_grid(results: Sequence[GridResult], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "structure", "mean", "ci_low", "ci_high", "k", "n_failed"])
        for r in sorted(results, key=lambda r: (r.model, r.structure)):
            if r.cindex is None:
                w.writerow([r.model, r.structure, "", "", "", 0, r.n_failed])
            else:
                c = r.cindex
                w.writerow([r.model, r.structure, repr(float(c.mean)), repr(float(c.ci_low)),
                            repr(float(c.ci_high)), c.k, r.n_failed])


def read_event_table(path: Path, node_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """External ``node_id,time,event`` table aligned to ``node_ids``."""
    import pandas as pd

    df = pd.read_csv(path, float_precision="round_trip")
    need = {"node_id", "time", "event"}
    if need - set(df.columns):
        raise SurvivalError(f"{path}: missing columns {sorted(need - set(df.columns))}")
    df = df.set_index("node_id").reindex(node_ids)
    if df.isna().any().any():
        raise SurvivalError(f"{path}: event table does not cover every node")
    return df["time"].to_numpy(np.float64), df["event"].to_numpy().astype(bool)
