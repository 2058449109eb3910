"""Centrality-based infection risk on multiplex contact networks."""
from .centrality import SolverConfig, compute_all, degree, eigenvector, pagerank
from .epidemic import EpiParams, run_ensemble, simulate
from .gbt import GbtParams
from .netgen import GenParams, generate
from .network import MultiplexNetwork, aggregate, build_multiplex, descriptive_stats, supra_adjacency
from .survival import concordance, fisher_z_mean, fit_cox, spearman_rho, uno_c_index

__all__ = [
    "SolverConfig", "compute_all", "degree", "eigenvector", "pagerank",
    "EpiParams", "run_ensemble", "simulate",
    "GbtParams",
    "GenParams", "generate",
    "MultiplexNetwork", "aggregate", "build_multiplex", "descriptive_stats", "supra_adjacency",
    "concordance", "fisher_z_mean", "fit_cox", "spearman_rho", "uno_c_index",
]
