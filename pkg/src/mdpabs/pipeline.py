"""End-to-end abstraction run: dataset -> cells -> clusters -> abstract MDP.

The metric-independent stages (semantic frame, interval refinement, cell
statistics) are factored out so a comparison sweep can compute them once and
share them across every (metric, k method) combination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import (AbstractState, Clustering, EpsilonReport, KSelection,
                         abstract_states, cluster_cells, select_k,
                         singleton_clustering, validate_epsilon)
from .core import ConfigError, ExperimentConfig
from .ingest import TrajectoryDataset, annotate_returns
from .intervals import CellSpace, SemanticFrame, build_frame, refine
from .mdp import AbstractMdp, attach_labels, build_abstract_mdp
from .metrics import CellStats, cell_statistics


@dataclass(frozen=True)
class Prepared:
    """Stages upstream of clustering, shared across metric/k-method runs."""

    frame: SemanticFrame
    space: CellSpace
    stats: tuple[CellStats, ...]


@dataclass(frozen=True)
class PipelineResult:
    frame: SemanticFrame
    space: CellSpace
    stats: tuple[CellStats, ...]
    selection: KSelection | None
    clustering: Clustering
    eps_report: EpsilonReport
    states: tuple[AbstractState, ...]
    mdp: AbstractMdp
    metric: str
    k_method: str
    seed: int

    @property
    def n_cells(self) -> int:
        return self.space.n_cells

    @property
    def n_states(self) -> int:
        return self.clustering.k


def prepare(ds: TrajectoryDataset, config: ExperimentConfig) -> Prepared:
    a = config.abstraction
    if ds.v_hat is None:
        ds = annotate_returns(ds, a.gamma)
    frame = build_frame(ds, config.semantics)
    space = refine(frame, a)
    stats = cell_statistics(frame, space, config.actions)
    return Prepared(frame, space, stats)


def run_abstraction(ds: TrajectoryDataset | None, config: ExperimentConfig, *,
                    metric: str = "spatiotemporal", k_method: str | None = None,
                    seed: int | None = None, prepared: Prepared | None = None,
                    runs_cache: dict | None = None,
                    pairwise: np.ndarray | None = None) -> PipelineResult:
    """One full abstraction run. Deterministic for a fixed (config, seed).

    ds may be None when `prepared` is given. runs_cache and pairwise are
    optional shared caches, only valid across calls with the same metric,
    weights, and seed.
    """
    a = config.abstraction
    k_method = k_method or a.k_method
    seed = a.seed if seed is None else seed
    if prepared is None:
        if ds is None:
            raise ValueError("need a dataset or a prepared bundle")
        prepared = prepare(ds, config)
    frame, space, stats = prepared.frame, prepared.space, prepared.stats

    if a.cluster_mode == "singleton":
        selection = None
        clustering = singleton_clustering(stats, metric=metric)
    else:
        if not a.k_range:
            raise ConfigError("k_range must be set for kmeans cluster_mode")
        selection = select_k(stats, k_method, a.k_range, metric, config.weights,
                             seed, runs=runs_cache, pairwise_matrix=pairwise)
        clustering = cluster_cells(stats, selection.k, metric, config.weights, seed)
    clustering, eps_report = validate_epsilon(
        clustering, stats, config.weights, a.auto_split, a.split_budget, seed)

    cell_sizes = np.bincount(space.assignment, minlength=space.n_cells)
    states = abstract_states(clustering, stats, cell_sizes)
    mdp = build_abstract_mdp(frame, space, clustering.labels, config.actions,
                             a.gamma, a.delta, a.p_tol)
    mdp = attach_labels(mdp, frame, space, clustering.labels)
    return PipelineResult(frame=frame, space=space, stats=stats,
                          selection=selection, clustering=clustering,
                          eps_report=eps_report, states=states, mdp=mdp,
                          metric=metric, k_method=k_method, seed=seed)
