"""Batch pipeline: generate -> stats -> centrality -> simulate -> evaluate -> gbt.

Every subcommand reads its inputs from and writes its CSVs to the output
directory, and records their sha256 in ``manifest.json``.  Exit codes:
0 success, 2 config error, 3 missing upstream artifact, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import centrality, epidemic, gbt, netgen, network, survival
from .config import ConfigError, PipelineConfig, load_config
from .seeding import child_seed

log = logging.getLogger("multiplex_risk")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

NETWORK_DIR = "network"
STATS = "stats.csv"
CENTRALITY = "centrality.csv"
INFECTIONS = "infections.csv"
CURVES = "curves.csv"
EPI_SUMMARY = "epidemic_summary.csv"
CORRELATIONS = "correlations.csv"
COX_GRID = "cox_grid.csv"
GBT_METRICS = "gbt_metrics.csv"
GBT_IMPORTANCE = "gbt_importance.csv"
MANIFEST = "manifest.json"


class MissingArtifact(RuntimeError):
    pass


class Workspace:
    def __init__(self, cfg: PipelineConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = max(1, threads)
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str, what: str, producer: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifact(f"missing {what}; run `{producer}`")
        return p

    def network_dir(self) -> Path:
        if self.cfg.edges_dir is not None:
            if not (self.cfg.edges_dir / "registry.txt").exists():
                raise MissingArtifact(f"missing registry.txt in network.edges_dir {self.cfg.edges_dir}")
            return self.cfg.edges_dir
        d = self.path(NETWORK_DIR)
        if not (d / "registry.txt").exists():
            raise MissingArtifact("missing network edge lists; run `generate`")
        return d

    def load_network(self) -> network.MultiplexNetwork:
        return network.read_edge_lists(self.network_dir())

    def node_ids(self) -> np.ndarray:
        return np.loadtxt(self.network_dir() / "registry.txt", dtype=np.int64, ndmin=1)

    def record(self, paths) -> None:
        """Add artifact checksums to the manifest (reset if the config changed)."""
        mpath = self.path(MANIFEST)
        digest = self.cfg.sha256()
        manifest = {"config_sha256": digest, "master_seed": self.cfg.master_seed, "artifacts": {}}
        if mpath.exists():
            old = json.loads(mpath.read_text())
            if old.get("config_sha256") == digest:
                manifest["artifacts"] = old.get("artifacts", {})
        for p in paths:
            rel = Path(p).relative_to(self.out).as_posix()
            manifest["artifacts"][rel] = hashlib.sha256(Path(p).read_bytes()).hexdigest()
        manifest["artifacts"] = dict(sorted(manifest["artifacts"].items()))
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(ws: Workspace) -> None:
    if ws.cfg.edges_dir is not None:
        raise ConfigError("network.edges_dir is set: the network is read from disk, nothing to generate")
    params = replace(ws.cfg.gen, rng_seed=child_seed(ws.cfg.master_seed, "netgen"))
    net = netgen.generate(params)
    paths = network.write_edge_lists(net, ws.path(NETWORK_DIR))
    log.info("generated %d nodes, edges per layer %s", net.n_nodes,
             {l.name: l.edge_count for l in net.layers})
    ws.record(paths)


def cmd_stats(ws: Workspace) -> None:
    net = ws.load_network()
    rows = network.descriptive_stats(net)
    network.write_stats(rows, ws.path(STATS))
    ws.record([ws.path(STATS)])


def cmd_centrality(ws: Workspace) -> None:
    net = ws.load_network()
    vectors = centrality.compute_all(net, ws.cfg.solver)
    for (m, s), cv in vectors.items():
        if "iterations" in cv.meta:
            log.info("%s/%s converged in %d iterations", m, s, cv.meta["iterations"])
    centrality.write_centralities(net, vectors.values(), ws.path(CENTRALITY))
    ws.record([ws.path(CENTRALITY)])


def _epi_params(cfg: PipelineConfig) -> epidemic.EpiParams:
    return replace(cfg.epidemic, rng_seed=child_seed(cfg.master_seed, "epidemic"))


def cmd_simulate(ws: Workspace) -> None:
    net = ws.load_network()
    records = epidemic.run_ensemble(net, _epi_params(ws.cfg), ws.cfg.k, ws.threads)
    capped = sum(r.hit_cap for r in records)
    if capped:
        log.warning("%d replicates stopped at max_weeks with infected nodes left", capped)
    epidemic.write_records(net, records, ws.path(INFECTIONS))
    epidemic.write_curves(records, ws.path(CURVES))
    epidemic.write_summary(epidemic.epidemic_summary(records), ws.path(EPI_SUMMARY))
    ws.record([ws.path(INFECTIONS), ws.path(CURVES), ws.path(EPI_SUMMARY)])


def _load_inputs(ws: Workspace):
    ids = ws.node_ids()
    cents = centrality.read_centralities(
        ws.require(CENTRALITY, "centrality scores", "centrality"), ids)
    if ws.cfg.events is not None:
        if not ws.cfg.events.exists():
            raise MissingArtifact(f"missing event table {ws.cfg.events} (eval.events)")
        replicates = [survival.read_event_table(ws.cfg.events, ids)]
    else:
        rec = ws.require(INFECTIONS, "infection records", "simulate")
        curves = ws.require(CURVES, "epidemic curves", "simulate")
        replicates = epidemic.read_records(rec, ids, epidemic.read_durations(curves))
    return cents, replicates


def cmd_evaluate(ws: Workspace) -> None:
    cents, replicates = _load_inputs(ws)
    between = survival.centrality_correlations(cents)
    timing = survival.timing_correlations(cents, replicates)
    survival.write_correlations(between, timing, ws.path(CORRELATIONS))
    specs = survival.load_grid(ws.cfg.grid or survival.default_grid_path())
    results = survival.evaluate_grid(cents, replicates, specs, tau=ws.cfg.tau, threads=ws.threads)
    survival.write_grid(results, ws.path(COX_GRID))
    ws.record([ws.path(CORRELATIONS), ws.path(COX_GRID)])


def cmd_gbt(ws: Workspace) -> None:
    cents, replicates = _load_inputs(ws)
    params = replace(ws.cfg.gbt, rng_seed=child_seed(ws.cfg.master_seed, "gbt"))
    results = gbt.evaluate_protocol(
        cents, replicates, params,
        include_censored=ws.cfg.include_censored,
        train_share=ws.cfg.train_share,
        threads=ws.threads,
    )
    failed = [r for r in results if r.error]
    if failed:
        log.warning("%d GBT fits failed, first: %s", len(failed), failed[0].error)
    gbt.write_metrics(results, ws.path(GBT_METRICS))
    gbt.write_importance(results, ws.path(GBT_IMPORTANCE))
    ws.record([ws.path(GBT_METRICS), ws.path(GBT_IMPORTANCE)])


def cmd_all(ws: Workspace) -> None:
    if ws.cfg.edges_dir is None:
        cmd_generate(ws)
    for step in (cmd_stats, cmd_centrality):
        step(ws)
    if ws.cfg.events is None:
        cmd_simulate(ws)
    cmd_evaluate(ws)
    cmd_gbt(ws)


COMMANDS = {
    "generate": (cmd_generate, "generate a synthetic four-layer network"),
    "stats": (cmd_stats, "per-layer descriptive statistics"),
    "centrality": (cmd_centrality, "degree, eigenvector and PageRank, multi and single"),
    "simulate": (cmd_simulate, "ensemble of SIR epidemics"),
    "evaluate": (cmd_evaluate, "Spearman correlations and the Cox model grid"),
    "gbt": (cmd_gbt, "boosted-tree timing models on a 10/90 split"),
    "all": (cmd_all, "run every step in order"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="config file with section.key = value lines")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, default=1, help="worker cap (default 1)")
    common.add_argument("--output", type=Path, help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config key; repeatable")
    common.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")
    parser = argparse.ArgumentParser(
        prog="multiplex-risk",
        description="Centrality-based infection risk on synthetic multiplex networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config, args.set, args.seed, args.output)
        ws = Workspace(cfg, args.threads)
        COMMANDS[args.command][0](ws)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (centrality.ConvergenceError, survival.CoxFitError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, network.NetworkError) as exc:
        # malformed inputs (bad CSVs, unknown layers) are configuration problems
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
