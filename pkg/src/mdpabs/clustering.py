"""Metric k-means over interval cells: k selection, clustering, splitting.

Centroids are virtual cell summaries (componentwise means, mixture transition
rows, majority availability), so the alternation is k-means in shape but runs
under any of the behavioral metrics. The mean update is not a descent step
for every metric; each update is therefore guarded and the loop stops at the
first non-improving objective, which keeps the logged objective non-increasing
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import MetricWeights
from .metrics import (CellStats, _euclidean_matrix, cross_distances,
                      pack_stats, pairwise_distances)

__all__ = [
    "Clustering",
    "AbstractState",
    "KSelection",
    "EpsilonReport",
    "centroid_stats",
    "cluster_cells",
    "singleton_clustering",
    "select_k",
    "validate_epsilon",
    "abstract_states",
]


def centroid_stats(members: Sequence[CellStats], cell_id: int = -1) -> CellStats:
    """Virtual summary of a member set.

    Componentwise unweighted means for t/v/theta; an action stays available
    when at least half the members have it (ties include), with its reward
    and transition row averaged over the members that do.
    """
    m = len(members)
    if m == 0:
        raise ValueError("centroid of empty member set")
    t_mean = float(np.mean([s.t_mean for s in members]))
    v_mean = float(np.mean([s.v_mean for s in members]))
    theta = np.mean([s.theta_mean for s in members], axis=0)
    occurrence: dict[int, int] = {}
    for s in members:
        for a in s.actions:
            occurrence[a] = occurrence.get(a, 0) + 1
    kept = sorted(a for a, c in occurrence.items() if 2 * c >= m)
    acts, cnts, rews, trans = [], [], [], []
    for a in kept:
        rs, ns, rows = [], 0, {}
        n_having = 0
        for s in members:
            if a not in s.availability:
                continue
            i = s.actions.index(a)
            rs.append(s.rewards[i])
            ns += s.counts[i]
            for dst, p in s.transitions[i].items():
                rows[dst] = rows.get(dst, 0.0) + p
            n_having += 1
        acts.append(a)
        cnts.append(ns)
        rews.append(float(np.mean(rs)))
        trans.append({d: p / n_having for d, p in sorted(rows.items())})
    return CellStats(cell_id=cell_id, actions=tuple(acts), counts=tuple(cnts),
                     rewards=tuple(rews), transitions=tuple(trans),
                     t_mean=t_mean, v_mean=v_mean,
                     theta_mean=tuple(float(x) for x in theta))


@dataclass(frozen=True)
class Clustering:
    """Result of one k-means run.

    labels[i] is the cluster of the i-th cell in cell-id order. inertia is
    the within-cluster sum of distances to the final member-mean centroids;
    objective_log tracks the assignment-time objective per accepted iteration
    and is non-increasing.
    """

    labels: np.ndarray
    centroids: tuple[CellStats, ...]
    inertia: float
    n_iter: int
    converged: bool
    metric: str
    objective_log: tuple[float, ...]

    @property
    def k(self) -> int:
        return len(self.centroids)


def _sorted_stats(stats: Sequence[CellStats]) -> tuple[CellStats, ...]:
    return tuple(sorted(stats, key=lambda s: s.cell_id))


def _repair_empty(d_matrix: np.ndarray, labels: np.ndarray, k: int) -> None:
    assigned = d_matrix[np.arange(labels.shape[0]), labels].copy()
    for c in range(k):
        if not np.any(labels == c):
            far = int(assigned.argmax())
            labels[far] = c
            assigned[far] = -1.0


def _seed_centroids(stats, pack, k: int, metric: str,
                    weights: MetricWeights | None, rng) -> list[CellStats]:
    # k-means++ seeding: next centroid drawn with probability proportional to
    # squared distance from the chosen set; degenerate mass falls back to the
    # lowest unchosen id
    n = len(stats)
    chosen = [int(rng.integers(n))]
    d_near = cross_distances(pack, pack_stats([stats[chosen[0]]]),
                             metric, weights)[:, 0]
    while len(chosen) < k:
        mass = d_near * d_near
        total = mass.sum()
        if total > 0.0:
            nxt = int(rng.choice(n, p=mass / total))
        else:
            nxt = min(i for i in range(n) if i not in chosen)
        chosen.append(nxt)
        d_new = cross_distances(pack, pack_stats([stats[nxt]]),
                                metric, weights)[:, 0]
        d_near = np.minimum(d_near, d_new)
    return [stats[i] for i in chosen]


def cluster_cells(stats: Sequence[CellStats], k: int, metric: str = "spatiotemporal",
                  weights: MetricWeights | None = None, seed: int = 0,
                  max_iters: int = 100) -> Clustering:
    stats = _sorted_stats(stats)
    n = len(stats)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    pack = pack_stats(stats)
    centroids = _seed_centroids(stats, pack, k, metric, weights, rng)

    labels: np.ndarray | None = None
    log: list[float] = []
    converged = False
    n_iter = 0
    for it in range(1, max_iters + 1):
        d_matrix = cross_distances(pack, pack_stats(centroids), metric, weights)
        labels_new = d_matrix.argmin(axis=1).astype(np.int64)
        _repair_empty(d_matrix, labels_new, k)
        obj = float(d_matrix[np.arange(n), labels_new].sum())
        if log and obj > log[-1] + 1e-12:
            converged = True  # stalled: mean update stopped helping
            break
        log.append(obj)
        n_iter = it
        if labels is not None and np.array_equal(labels_new, labels):
            labels = labels_new
            converged = True
            break
        labels = labels_new
        centroids = [centroid_stats([stats[i] for i in np.flatnonzero(labels == c)],
                                    cell_id=-(c + 1))
                     for c in range(k)]

    assert labels is not None
    final = tuple(centroid_stats([stats[i] for i in np.flatnonzero(labels == c)],
                                 cell_id=-(c + 1))
                  for c in range(k))
    d_final = cross_distances(pack, pack_stats(final), metric, weights)
    inertia = float(d_final[np.arange(n), labels].sum())
    return Clustering(labels=labels, centroids=final, inertia=inertia,
                      n_iter=n_iter, converged=converged, metric=metric,
                      objective_log=tuple(log))


def singleton_clustering(stats: Sequence[CellStats],
                         metric: str = "spatiotemporal") -> Clustering:
    """Identity abstraction: every cell is its own abstract state."""
    stats = _sorted_stats(stats)
    return Clustering(labels=np.arange(len(stats), dtype=np.int64),
                      centroids=tuple(stats), inertia=0.0, n_iter=0,
                      converged=True, metric=metric, objective_log=(0.0,))


# ------------------------------------------------------------------ k selection

@dataclass(frozen=True)
class KSelection:
    k: int
    method: str
    scores: dict


def _euclidean_kmeans(points: np.ndarray, k: int, seed: int,
                      max_iters: int = 100) -> float:
    """Plain array k-means, returns the within-cluster sum of distances."""
    n = points.shape[0]
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d_near = np.linalg.norm(points - points[chosen[0]], axis=1)
    while len(chosen) < k:
        mass = d_near * d_near
        total = mass.sum()
        if total > 0.0:
            nxt = int(rng.choice(n, p=mass / total))
        else:
            nxt = min(i for i in range(n) if i not in chosen)
        chosen.append(nxt)
        d_near = np.minimum(d_near, np.linalg.norm(points - points[nxt], axis=1))
    centers = points[chosen].copy()
    labels = None
    for _ in range(max_iters):
        d_matrix = _euclidean_matrix(points, centers)
        labels_new = d_matrix.argmin(axis=1)
        _repair_empty(d_matrix, labels_new, k)
        if labels is not None and np.array_equal(labels_new, labels):
            break
        labels = labels_new
        for c in range(k):
            centers[c] = points[labels == c].mean(axis=0)
    return float(d_matrix[np.arange(n), labels].sum())


def _mean_silhouette(d_matrix: np.ndarray, labels: np.ndarray, k: int) -> float:
    n = labels.shape[0]
    members = [np.flatnonzero(labels == c) for c in range(k)]
    total = 0.0
    for i in range(n):
        own = members[labels[i]]
        if own.shape[0] <= 1:
            continue  # singleton contributes 0
        a = d_matrix[i, own].sum() / (own.shape[0] - 1)
        b = min(d_matrix[i, mem].mean() for c, mem in enumerate(members)
                if c != labels[i] and mem.shape[0] > 0)
        m = max(a, b)
        if m > 0.0:
            total += (b - a) / m
    return total / n


def select_k(stats: Sequence[CellStats], method: str, k_range: Sequence[int],
             metric: str = "spatiotemporal", weights: MetricWeights | None = None,
             seed: int = 0, *, runs: dict | None = None,
             pairwise_matrix: np.ndarray | None = None) -> KSelection:
    """Pick the cluster count by one of four rules.

    runs and pairwise_matrix are shared caches: passing the same dict/matrix
    across methods reuses clusterings and the full distance matrix, which is
    what the metric-comparison sweep does.
    """
    stats = _sorted_stats(stats)
    n = len(stats)
    ks = sorted({int(k) for k in k_range if 2 <= k <= n})
    if method != "canopy" and not ks:
        raise ValueError("k_range is empty after clamping to [2, n]")
    runs = {} if runs is None else runs

    def run(k: int) -> Clustering:
        if k not in runs:
            runs[k] = cluster_cells(stats, k, metric, weights, seed)
        return runs[k]

    def full_matrix() -> np.ndarray:
        nonlocal pairwise_matrix
        if pairwise_matrix is None:
            pairwise_matrix = pairwise_distances(pack_stats(stats), metric, weights)
        return pairwise_matrix

    if method == "elbow":
        w_by_k = {k: run(k).inertia for k in ks}
        if len(ks) < 3:
            return KSelection(ks[0], method, {"W": w_by_k})
        w_list = [w_by_k[k] for k in ks]
        curvature = {ks[i]: w_list[i - 1] - 2.0 * w_list[i] + w_list[i + 1]
                     for i in range(1, len(ks) - 1)}
        k_best = max(curvature, key=lambda k: (curvature[k], -k))
        return KSelection(k_best, method, {"W": w_by_k, "curvature": curvature})

    if method == "silhouette":
        d_full = full_matrix()
        scores = {k: _mean_silhouette(d_full, run(k).labels, k) for k in ks}
        k_best = max(ks, key=lambda k: (scores[k], -k))
        return KSelection(k_best, method, {"silhouette": scores})

    if method == "gap":
        # references are uniform in the euclidean embedding's bounding box and
        # both sides are scored by euclidean k-means there, so the two log-W
        # terms live in the same units
        emb = pack_stats(stats).emb
        lo, hi = emb.min(axis=0), emb.max(axis=0)
        b_refs = 10
        rng = np.random.default_rng(seed)
        refs = [lo + rng.random(emb.shape) * (hi - lo) for _ in range(b_refs)]
        sub_seeds = rng.integers(0, 2 ** 63, size=(b_refs + 1) * len(ks))
        pos = 0
        log_w_ref = {k: [] for k in ks}
        for ref in refs:
            for k in ks:
                log_w_ref[k].append(np.log(max(_euclidean_kmeans(ref, k, int(sub_seeds[pos])), 1e-300)))
                pos += 1
        gap, spread = {}, {}
        for k in ks:
            log_w_data = np.log(max(_euclidean_kmeans(emb, k, int(sub_seeds[pos])), 1e-300))
            pos += 1
            gap[k] = float(np.mean(log_w_ref[k]) - log_w_data)
            spread[k] = float(np.std(log_w_ref[k]) * np.sqrt(1.0 + 1.0 / b_refs))
        k_best = ks[-1]
        for a, b in zip(ks, ks[1:]):
            if gap[a] >= gap[b] - spread[b]:
                k_best = a
                break
        return KSelection(k_best, method, {"gap": gap, "s": spread})

    if method == "canopy":
        d_full = full_matrix()
        iu = np.triu_indices(n, 1)
        t2 = float(np.median(d_full[iu])) if iu[0].size else 0.0
        t1 = 2.0 * t2
        removed = np.zeros(n, dtype=bool)
        canopies = 0
        for i in range(n):
            if removed[i]:
                continue
            canopies += 1
            removed |= d_full[i] <= t2
            removed[i] = True
        k_best = min(max(canopies, 2), n)
        return KSelection(k_best, method,
                          {"T1": t1, "T2": t2, "canopies": canopies})

    raise ValueError(f"unknown k selection method {method!r}")


# ------------------------------------------------------------- epsilon control

@dataclass(frozen=True)
class EpsilonReport:
    """Per-cluster diameters against the epsilon bound.

    diameters is ordered by cluster id; violations lists clusters still above
    epsilon after any splitting; splits records (source, new) cluster pairs.
    """

    epsilon: float
    diameters: tuple[float, ...]
    violations: tuple[int, ...]
    splits: tuple[tuple[int, int], ...]


def _cluster_diameter(stats: Sequence[CellStats], member_idx: np.ndarray,
                      metric: str, weights: MetricWeights | None) -> float:
    if member_idx.shape[0] <= 1:
        return 0.0
    sub = pack_stats([stats[i] for i in member_idx])
    return float(pairwise_distances(sub, metric, weights).max())


def validate_epsilon(clustering: Clustering, stats: Sequence[CellStats],
                     weights: MetricWeights | None = None, auto_split: bool = False,
                     split_budget: int = 16, seed: int = 0
                     ) -> tuple[Clustering, EpsilonReport]:
    """Check max intra-cluster pairwise distance per cluster against epsilon.

    With auto_split, the widest violating cluster is bisected by 2-means and
    the result revalidated until clean or out of budget. Returns the possibly
    rewritten clustering plus the report.
    """
    stats = _sorted_stats(stats)
    w = weights or MetricWeights()
    metric = clustering.metric
    labels = clustering.labels.copy()
    clusters = {c: np.flatnonzero(labels == c) for c in range(clustering.k)}
    diam = {c: _cluster_diameter(stats, mem, metric, w)
            for c, mem in clusters.items()}
    splits: list[tuple[int, int]] = []
    budget = split_budget if auto_split else 0
    while budget > 0:
        violating = [c for c, mem in clusters.items()
                     if diam[c] > w.epsilon and mem.shape[0] >= 2]
        if not violating:
            break
        src = max(violating, key=lambda c: (diam[c], -c))
        sub_seed = (seed * 9973 + src) % (2 ** 31)
        sub = cluster_cells([stats[i] for i in clusters[src]], 2, metric, w,
                            seed=sub_seed)
        moved = clusters[src][sub.labels == 1]
        new_id = max(clusters) + 1
        clusters[src] = clusters[src][sub.labels == 0]
        clusters[new_id] = moved
        labels[moved] = new_id
        diam[src] = _cluster_diameter(stats, clusters[src], metric, w)
        diam[new_id] = _cluster_diameter(stats, moved, metric, w)
        splits.append((src, new_id))
        budget -= 1
    order = sorted(clusters)
    report = EpsilonReport(epsilon=w.epsilon,
                           diameters=tuple(diam[c] for c in order),
                           violations=tuple(c for c in order if diam[c] > w.epsilon),
                           splits=tuple(splits))
    if not splits:
        return clustering, report
    centroids = tuple(centroid_stats([stats[i] for i in clusters[c]], -(c + 1))
                      for c in order)
    pack = pack_stats(stats)
    d_final = cross_distances(pack, pack_stats(centroids), metric, w)
    inertia = float(d_final[np.arange(len(stats)), labels].sum())
    rebuilt = replace(clustering, labels=labels, centroids=centroids,
                      inertia=inertia)
    return rebuilt, report


@dataclass(frozen=True)
class AbstractState:
    """One state of the abstract model: a cluster of interval cells."""

    id: int
    members: tuple[int, ...]
    centroid: CellStats
    occupancy: int


def abstract_states(clustering: Clustering, stats: Sequence[CellStats],
                    cell_sizes: Sequence[int] | None = None
                    ) -> tuple[AbstractState, ...]:
    stats = _sorted_stats(stats)
    out = []
    for c in range(clustering.k):
        member_idx = np.flatnonzero(clustering.labels == c)
        members = tuple(int(stats[i].cell_id) for i in member_idx)
        if cell_sizes is not None:
            occ = int(sum(cell_sizes[m] for m in members))
        else:
            occ = int(sum(sum(stats[i].counts) for i in member_idx))
        out.append(AbstractState(id=c, members=members,
                                 centroid=clustering.centroids[c], occupancy=occ))
    return tuple(out)
