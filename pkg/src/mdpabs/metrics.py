"""Behavioral distances between abstract-state statistics.

Every distance exists twice: object-level functions on CellStats define the
semantics, and numba kernels over packed CSR arrays run the quadratic sweeps
that clustering needs. The two routes are checked against each other in the
tests, so an edit to one side has to land on the other as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numba import njit, prange

from .actions import ActionAbstraction, abstract_action
from .core import MetricWeights
from .intervals import CellSpace, SemanticFrame

__all__ = [
    "CellStats",
    "cell_statistics",
    "d_euclidean",
    "d_tv",
    "d_multistep",
    "d_spatiotemporal",
    "cell_distance",
    "StatsPack",
    "pack_stats",
    "pairwise_distances",
    "cross_distances",
]

_SUM_TOL = 1e-6


@dataclass(frozen=True)
class CellStats:
    """Per-cell behavioral summary.

    actions holds the sorted flat abstract-action ids observed in the cell
    (the availability set); rewards and transitions line up with it.
    Transition rows are dest-cell -> probability mappings. t_mean is the mean
    raw step index of member states, v_mean the mean normalized return,
    theta_mean the member mean in normalized semantic coordinates.
    """

    cell_id: int
    actions: tuple[int, ...]
    counts: tuple[int, ...]
    rewards: tuple[float, ...]
    transitions: tuple[dict[int, float], ...]
    t_mean: float
    v_mean: float
    theta_mean: tuple[float, ...]

    @property
    def availability(self) -> frozenset[int]:
        return frozenset(self.actions)


def cell_statistics(frame: SemanticFrame, space: CellSpace,
                    actions: ActionAbstraction) -> tuple[CellStats, ...]:
    """Accumulate visit counts, mean rewards and transition rows per cell.

    Transitions follow the recording convention: row i carries the action
    taken from state i and the reward it earned, and lands on row i+1 of the
    same episode. Terminal rows emit no transition but still contribute to
    the state-level means.
    """
    ds = frame.dataset
    assign = space.assignment
    n_cells = space.n_cells
    n, j_dims = frame.theta.shape

    counts = np.bincount(assign, minlength=n_cells).astype(float)
    t_mean = np.bincount(assign, weights=ds.t, minlength=n_cells) / counts
    v_mean = np.bincount(assign, weights=frame.v_hat_norm, minlength=n_cells) / counts
    theta_mean = np.empty((n_cells, j_dims))
    for j in range(j_dims):
        theta_mean[:, j] = np.bincount(assign, weights=frame.theta[:, j],
                                       minlength=n_cells) / counts

    flat = np.array([actions.flat_index(abstract_action(actions, ds.actions[i]))
                     for i in range(n)], dtype=np.int64)

    # acc[(cell, a_hat)] = [visits, reward_sum, {dst: visits}]
    acc: dict[tuple[int, int], list] = {}
    for start, end in ds.episodes:
        for i in range(start, end - 1):
            key = (int(assign[i]), int(flat[i]))
            ent = acc.get(key)
            if ent is None:
                ent = [0, 0.0, {}]
                acc[key] = ent
            ent[0] += 1
            ent[1] += float(ds.rewards[i])
            dst = int(assign[i + 1])
            ent[2][dst] = ent[2].get(dst, 0) + 1

    per_cell: dict[int, list[tuple[int, list]]] = {c: [] for c in range(n_cells)}
    for (c, a), ent in acc.items():
        per_cell[c].append((a, ent))

    out = []
    for c in range(n_cells):
        rows = sorted(per_cell[c])
        acts, cnts, rews, trans = [], [], [], []
        for a, (m, r_sum, dsts) in rows:
            acts.append(a)
            cnts.append(m)
            rews.append(r_sum / m)
            trans.append({d: k / m for d, k in sorted(dsts.items())})
        out.append(CellStats(cell_id=c, actions=tuple(acts), counts=tuple(cnts),
                             rewards=tuple(rews), transitions=tuple(trans),
                             t_mean=float(t_mean[c]), v_mean=float(v_mean[c]),
                             theta_mean=tuple(float(x) for x in theta_mean[c])))
    return tuple(out)


# ---------------------------------------------------------------- object route

def d_euclidean(s1: CellStats, s2: CellStats) -> float:
    """Plain distance in the (theta_mean, v_mean) embedding."""
    a = np.array([*s1.theta_mean, s1.v_mean])
    b = np.array([*s2.theta_mean, s2.v_mean])
    return float(np.sqrt(((a - b) ** 2).sum()))


def _as_items(p) -> list[tuple[int, float]]:
    if isinstance(p, Mapping):
        return sorted((int(k), float(v)) for k, v in p.items())
    arr = np.asarray(p, dtype=float)
    return list(enumerate(arr.tolist()))


def d_tv(p, q) -> float:
    """Total variation distance between two distributions.

    Accepts dense vectors or sparse {outcome: prob} mappings; both must sum
    to 1 within 1e-6.
    """
    items_p, items_q = _as_items(p), _as_items(q)
    for name, items in (("p", items_p), ("q", items_q)):
        total = sum(v for _, v in items)
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"{name} sums to {total!r}, not a distribution")
    merged: dict[int, float] = {k: v for k, v in items_p}
    for k, v in items_q:
        merged[k] = merged.get(k, 0.0) - v
    return 0.5 * sum(abs(v) for v in merged.values())


def d_multistep(s1: CellStats, s2: CellStats, weights: MetricWeights | None = None) -> float:
    """Worst-case one-step behavioral gap over shared actions.

    max over shared a_hat of c_r*|R1-R2| + c_p*TV(P1,P2), plus c_d when the
    availability sets differ. Pseudometric as long as reward spreads stay
    small against c_d (default 1e6).
    """
    w = weights or MetricWeights()
    shared = set(s1.actions) & set(s2.actions)
    worst = 0.0
    for a in shared:
        i, j = s1.actions.index(a), s2.actions.index(a)
        term = w.c_r * abs(s1.rewards[i] - s2.rewards[j])
        if w.c_p:
            term += w.c_p * d_tv(s1.transitions[i], s2.transitions[j])
        worst = max(worst, term)
    if set(s1.actions) != set(s2.actions):
        worst += w.c_d
    return worst


def d_spatiotemporal(s1: CellStats, s2: CellStats, weights: MetricWeights | None = None) -> float:
    """Multi-step gap plus a temporal-window indicator term.

    With c_t = 0 (the default) this is exactly d_multistep.
    """
    w = weights or MetricWeights()
    d = d_multistep(s1, s2, w)
    if w.c_t and abs(s1.t_mean - s2.t_mean) > w.tau_t:
        d += w.c_t
    return d


def cell_distance(s1: CellStats, s2: CellStats, metric: str,
                  weights: MetricWeights | None = None) -> float:
    if metric == "euclidean":
        return d_euclidean(s1, s2)
    if metric == "multistep":
        return d_multistep(s1, s2, weights)
    if metric == "spatiotemporal":
        return d_spatiotemporal(s1, s2, weights)
    raise ValueError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------- packed route

@dataclass(frozen=True)
class StatsPack:
    """CSR layout of a CellStats sequence for the numba kernels.

    act_ptr[c]:act_ptr[c+1] slices act_ids/rewards/row_ptr for cell c;
    row_ptr[k]:row_ptr[k+1] slices col_idx/probs for availability slot k.
    emb stacks (theta_mean, v_mean), the euclidean embedding.
    """

    act_ptr: np.ndarray
    act_ids: np.ndarray
    rewards: np.ndarray
    row_ptr: np.ndarray
    col_idx: np.ndarray
    probs: np.ndarray
    t_mean: np.ndarray
    emb: np.ndarray

    @property
    def n(self) -> int:
        return self.act_ptr.shape[0] - 1


def pack_stats(stats: Sequence[CellStats]) -> StatsPack:
    n = len(stats)
    act_ptr = np.zeros(n + 1, dtype=np.int64)
    for c, s in enumerate(stats):
        act_ptr[c + 1] = act_ptr[c] + len(s.actions)
    total = int(act_ptr[-1])
    act_ids = np.empty(total, dtype=np.int64)
    rewards = np.empty(total, dtype=np.float64)
    row_ptr = np.zeros(total + 1, dtype=np.int64)
    pos = 0
    for s in stats:
        for a, r, row in zip(s.actions, s.rewards, s.transitions):
            act_ids[pos] = a
            rewards[pos] = r
            row_ptr[pos + 1] = row_ptr[pos] + len(row)
            pos += 1
    nnz = int(row_ptr[-1])
    col_idx = np.empty(nnz, dtype=np.int64)
    probs = np.empty(nnz, dtype=np.float64)
    pos = 0
    for s in stats:
        for row in s.transitions:
            for dst in sorted(row):
                col_idx[pos] = dst
                probs[pos] = row[dst]
                pos += 1
    t_mean = np.array([s.t_mean for s in stats], dtype=np.float64)
    if n:
        emb = np.array([[*s.theta_mean, s.v_mean] for s in stats], dtype=np.float64)
    else:
        emb = np.zeros((0, 1))
    return StatsPack(act_ptr=act_ptr, act_ids=act_ids, rewards=rewards,
                     row_ptr=row_ptr, col_idx=col_idx, probs=probs,
                     t_mean=t_mean, emb=emb)


@njit(cache=True)
def _row_tv(col_a, p_a, col_b, p_b):
    s = 0.0
    i = j = 0
    na, nb = col_a.shape[0], col_b.shape[0]
    while i < na and j < nb:
        ca, cb = col_a[i], col_b[j]
        if ca == cb:
            s += abs(p_a[i] - p_b[j])
            i += 1
            j += 1
        elif ca < cb:
            s += p_a[i]
            i += 1
        else:
            s += p_b[j]
            j += 1
    while i < na:
        s += p_a[i]
        i += 1
    while j < nb:
        s += p_b[j]
        j += 1
    return 0.5 * s


@njit(cache=True)
def _stats_dist(ia, ap_a, ai_a, rw_a, rp_a, ci_a, pr_a, t_a,
                ib, ap_b, ai_b, rw_b, rp_b, ci_b, pr_b, t_b,
                c_r, c_p, c_d, c_t, tau_t):
    a0, a1 = ap_a[ia], ap_a[ia + 1]
    b0, b1 = ap_b[ib], ap_b[ib + 1]
    i, j = a0, b0
    worst = 0.0
    differ = False
    while i < a1 and j < b1:
        ca, cb = ai_a[i], ai_b[j]
        if ca == cb:
            term = c_r * abs(rw_a[i] - rw_b[j])
            if c_p != 0.0:
                term += c_p * _row_tv(ci_a[rp_a[i]:rp_a[i + 1]], pr_a[rp_a[i]:rp_a[i + 1]],
                                      ci_b[rp_b[j]:rp_b[j + 1]], pr_b[rp_b[j]:rp_b[j + 1]])
            if term > worst:
                worst = term
            i += 1
            j += 1
        elif ca < cb:
            differ = True
            i += 1
        else:
            differ = True
            j += 1
    if i < a1 or j < b1:
        differ = True
    d = worst + (c_d if differ else 0.0)
    if c_t != 0.0 and abs(t_a[ia] - t_b[ib]) > tau_t:
        d += c_t
    return d


@njit(cache=True, parallel=True)
def _pairwise_kernel(ap, ai, rw, rp, ci, pr, t, c_r, c_p, c_d, c_t, tau_t):
    n = ap.shape[0] - 1
    out = np.zeros((n, n))
    for i in prange(n):
        for j in range(i + 1, n):
            d = _stats_dist(i, ap, ai, rw, rp, ci, pr, t,
                            j, ap, ai, rw, rp, ci, pr, t,
                            c_r, c_p, c_d, c_t, tau_t)
            out[i, j] = d
            out[j, i] = d
    return out


@njit(cache=True, parallel=True)
def _cross_kernel(ap_a, ai_a, rw_a, rp_a, ci_a, pr_a, t_a,
                  ap_b, ai_b, rw_b, rp_b, ci_b, pr_b, t_b,
                  c_r, c_p, c_d, c_t, tau_t):
    na = ap_a.shape[0] - 1
    nb = ap_b.shape[0] - 1
    out = np.empty((na, nb))
    for i in prange(na):
        for j in range(nb):
            out[i, j] = _stats_dist(i, ap_a, ai_a, rw_a, rp_a, ci_a, pr_a, t_a,
                                    j, ap_b, ai_b, rw_b, rp_b, ci_b, pr_b, t_b,
                                    c_r, c_p, c_d, c_t, tau_t)
    return out


def _euclidean_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit differences, blocked to cap memory; the gram-matrix shortcut
    # loses identical rows to cancellation noise around 1e-8
    out = np.empty((a.shape[0], b.shape[0]))
    per_row = max(1, b.shape[0] * a.shape[1])
    step = max(1, 1_000_000 // per_row)
    for lo in range(0, a.shape[0], step):
        hi = min(lo + step, a.shape[0])
        diff = a[lo:hi, None, :] - b[None, :, :]
        out[lo:hi] = np.sqrt((diff * diff).sum(axis=2))
    return out


def _kernel_weights(metric: str, weights: MetricWeights | None):
    w = weights or MetricWeights()
    c_t = w.c_t if metric == "spatiotemporal" else 0.0
    return w.c_r, w.c_p, w.c_d, c_t, float(w.tau_t)


def pairwise_distances(pack: StatsPack, metric: str,
                       weights: MetricWeights | None = None) -> np.ndarray:
    """Full symmetric distance matrix over one pack."""
    if metric == "euclidean":
        out = _euclidean_matrix(pack.emb, pack.emb)
        np.fill_diagonal(out, 0.0)
        return out
    if metric not in ("multistep", "spatiotemporal"):
        raise ValueError(f"unknown metric {metric!r}")
    return _pairwise_kernel(pack.act_ptr, pack.act_ids, pack.rewards,
                            pack.row_ptr, pack.col_idx, pack.probs, pack.t_mean,
                            *_kernel_weights(metric, weights))


def cross_distances(pack_a: StatsPack, pack_b: StatsPack, metric: str,
                    weights: MetricWeights | None = None) -> np.ndarray:
    """Rectangular distances, rows from pack_a and columns from pack_b."""
    if metric == "euclidean":
        return _euclidean_matrix(pack_a.emb, pack_b.emb)
    if metric not in ("multistep", "spatiotemporal"):
        raise ValueError(f"unknown metric {metric!r}")
    return _cross_kernel(pack_a.act_ptr, pack_a.act_ids, pack_a.rewards,
                         pack_a.row_ptr, pack_a.col_idx, pack_a.probs, pack_a.t_mean,
                         pack_b.act_ptr, pack_b.act_ids, pack_b.rewards,
                         pack_b.row_ptr, pack_b.col_idx, pack_b.probs, pack_b.t_mean,
                         *_kernel_weights(metric, weights))
