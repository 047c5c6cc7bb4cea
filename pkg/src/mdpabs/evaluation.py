"""Abstraction quality measures: compression ratio, held-out semantic MAE,
and the metric-comparison sweep report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import Clustering
from .core import (ExperimentConfig, K_METHODS, METRIC_NAMES,
                   NormalizationBounds, denormalize, normalize)
from .ingest import (TrajectoryDataset, annotate_returns, content_hash,
                     split_dataset)
from .intervals import CellSpace, assign_states
from .metrics import pack_stats, pairwise_distances
from .pipeline import prepare, run_abstraction


def compression_ratio(n_abstract: int, n_concrete: int) -> float:
    """Abstract-to-concrete state count ratio, in (0, 1]."""
    if n_concrete <= 0:
        raise ValueError("concrete state count must be positive")
    if not (1 <= n_abstract <= n_concrete):
        raise ValueError(f"need 1 <= n_abstract <= n_concrete, "
                         f"got {n_abstract} and {n_concrete}")
    return n_abstract / n_concrete


def mean_absolute_error(space: CellSpace, clustering: Clustering,
                        bounds: NormalizationBounds,
                        val_theta_raw: np.ndarray) -> float:
    """Mean deviation between the abstraction's prediction and held-out data.

    Each validation state maps through its containing (or nearest) cell to an
    abstract state; the prediction is that state's centroid semantic vector
    denormalized back to raw units; the per-state error is the mean absolute
    difference over semantic dimensions, and the result averages over states.
    """
    val_theta_raw = np.asarray(val_theta_raw, dtype=float)
    if val_theta_raw.ndim != 2 or val_theta_raw.shape[0] == 0:
        raise ValueError("validation set is empty")
    theta = normalize(val_theta_raw, bounds)
    cells = assign_states(space, theta)
    states = clustering.labels[cells]
    cent = np.array([c.theta_mean for c in clustering.centroids])
    pred = denormalize(cent[states], bounds)
    per_state = np.abs(pred - val_theta_raw).mean(axis=1)
    return float(per_state.mean())


@dataclass(frozen=True)
class EvalRow:
    metric: str
    k_method: str
    k: int                 # chosen cluster count
    n_cells: int           # interval cells (first abstraction stage)
    n_states: int          # abstract states after any splits (second stage)
    cr: float
    mae: float


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    train_hash: str
    val_hash: str
    n_concrete: int
    rows: tuple[EvalRow, ...]

    def to_jsonable(self) -> dict:
        return {
            "dataset": self.dataset,
            "train_hash": self.train_hash,
            "val_hash": self.val_hash,
            "n_concrete": self.n_concrete,
            "rows": [{"metric": r.metric, "k_method": r.k_method, "k": r.k,
                      "n_cells": r.n_cells, "n_states": r.n_states,
                      "cr": r.cr, "mae": r.mae} for r in self.rows],
        }

    def table(self) -> str:
        header = ("metric", "k_method", "k", "cells", "states", "CR", "MAE")
        body = [(r.metric, r.k_method, str(r.k), str(r.n_cells),
                 str(r.n_states), f"{r.cr:.4f}", f"{r.mae:.4f}")
                for r in self.rows]
        widths = [max(len(row[i]) for row in [header, *body])
                  for i in range(len(header))]
        lines = ["  ".join(f"{v:<{w}}" for v, w in zip(row, widths)).rstrip()
                 for row in [header, *body]]
        return "\n".join(lines)


def compare_metrics(ds: TrajectoryDataset, config: ExperimentConfig,
                    metrics=METRIC_NAMES, k_methods=K_METHODS) -> EvalReport:
    """Full pipeline per (metric, k method) with a shared seed and split.

    The stages upstream of clustering do not depend on the metric, so they
    run once; per metric the pairwise distance matrix and the clustering runs
    are shared across k methods. Results are identical to invoking each
    pipeline separately.
    """
    a = config.abstraction
    train, val = split_dataset(ds, config.split_ratio, a.seed)
    train = annotate_returns(train, a.gamma)
    prepared = prepare(train, config)
    val_theta_raw = config.semantics.evaluate(val.feature_names, val.features)

    rows = []
    pack = pack_stats(prepared.stats)
    for metric in metrics:
        runs: dict = {}
        pw = pairwise_distances(pack, metric, config.weights)
        for k_method in k_methods:
            result = run_abstraction(None, config, metric=metric,
                                     k_method=k_method, prepared=prepared,
                                     runs_cache=runs, pairwise=pw)
            chosen_k = result.selection.k if result.selection else result.n_states
            rows.append(EvalRow(
                metric=metric, k_method=k_method, k=chosen_k,
                n_cells=result.n_cells, n_states=result.n_states,
                cr=compression_ratio(result.n_states, prepared.frame.n_states),
                mae=mean_absolute_error(result.space, result.clustering,
                                        prepared.frame.bounds, val_theta_raw)))
    return EvalReport(dataset=config.name, train_hash=content_hash(train),
                      val_hash=content_hash(val),
                      n_concrete=prepared.frame.n_states, rows=tuple(rows))
