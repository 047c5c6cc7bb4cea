"""Semantic interval abstraction.

Greedy per-dimension interval partitioning under length/occupancy
constraints, Cartesian cell construction with a small-cell merge rule, error
and reduction measurement, and the iterative refinement loop that shrinks or
grows the length budget until the error and compression targets hold.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import NormalizationBounds, SemanticMapping, normalize
from .ingest import TrajectoryDataset


@dataclass(frozen=True)
class SemanticFrame:
    """Normalized semantic view of a dataset.

    theta rows are the configured semantic dimensions mapped into [0,1] with
    bounds fitted on the modeling split; v_hat_norm is the Monte-Carlo return
    on the same treatment. Validation frames reuse modeling bounds, so their
    coordinates are clamped.
    """

    dataset: TrajectoryDataset
    theta: np.ndarray          # (n, J) in [0,1]
    v_hat_norm: np.ndarray     # (n,) in [0,1]
    theta_raw: np.ndarray      # (n, J) raw units
    bounds: NormalizationBounds
    v_bounds: NormalizationBounds

    @property
    def J(self) -> int:
        return self.theta.shape[1]

    @property
    def n_states(self) -> int:
        return self.theta.shape[0]


def build_frame(ds: TrajectoryDataset, semantics: SemanticMapping,
                bounds: NormalizationBounds | None = None,
                v_bounds: NormalizationBounds | None = None) -> SemanticFrame:
    """Compute the semantic view; fit bounds when none are supplied."""
    if ds.v_hat is None:
        raise ValueError("dataset has no v_hat; run annotate_returns first")
    theta_raw = semantics.evaluate(ds.feature_names, ds.features)
    if bounds is None:
        bounds = NormalizationBounds.from_values(semantics.names, theta_raw)
    if v_bounds is None:
        lo, hi = float(ds.v_hat.min()), float(ds.v_hat.max())
        if lo == hi:
            # constant returns carry no information; keep the bounds
            # invertible so denormalize(0) returns the constant
            hi = lo + 1.0
        v_bounds = NormalizationBounds(("v_hat",), (lo,), (hi,))
    theta = normalize(theta_raw, bounds)
    v_hat_norm = normalize(ds.v_hat[:, None], v_bounds)[:, 0]
    return SemanticFrame(ds, theta, v_hat_norm, theta_raw, bounds, v_bounds)


# ---------------------------------------------------------------------------
# per-dimension greedy partition


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    count: int
    underfull: bool = False

    @property
    def length(self) -> float:
        return self.hi - self.lo


def partition_dimension(values: np.ndarray, d_min: float, d_max: float,
                        n_min_count: int) -> list[Interval]:
    """Greedy left-to-right maximal intervals over sorted values in [0,1].

    Each interval starts at the smallest uncovered value and extends to the
    furthest value within d_max (never shorter than d_min, clipped at 1.0 for
    a tail that would overhang). Intervals that cannot reach n_min_count even
    at full extension are flagged underfull rather than rejected; so is a
    clipped tail left shorter than d_min, since it likewise could not extend
    fully inside the unit range.

    Membership convention: an interval owns (prev_hi, hi]; a value exactly on
    a shared boundary belongs to the lower interval, and the first interval
    also owns its own lo.
    """
    if d_min > d_max:
        raise ValueError("d_min must not exceed d_max")
    vals = np.sort(np.asarray(values, dtype=float))
    if vals.size == 0:
        raise ValueError("cannot partition an empty value list")
    out: list[Interval] = []
    i = 0
    n = vals.size
    while i < n:
        v = float(vals[i])
        j = int(np.searchsorted(vals, v + d_max, side="right")) - 1
        u_data = float(vals[j])
        hi = v + max(d_min, u_data - v)
        if hi > 1.0:
            # tail overhang: clip into the unit range but never below the data
            hi = max(u_data, min(hi, 1.0))
        count = j - i + 1
        short = hi - v < d_min - 1e-15
        out.append(Interval(v, hi, count, underfull=count < n_min_count or short))
        i = j + 1
    return out


# ---------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class IntervalCell:
    cell_id: int
    index: tuple[int, ...]            # primary grid index (absorber keeps its own)
    idx_lo: tuple[int, ...]           # covered index ranges after merging
    idx_hi: tuple[int, ...]
    lows: tuple[float, ...]
    highs: tuple[float, ...]
    member_ids: np.ndarray
    flags: tuple[str, ...] = ()

    @property
    def count(self) -> int:
        return int(self.member_ids.shape[0])

    def lengths(self) -> tuple[float, ...]:
        return tuple(h - l for l, h in zip(self.lows, self.highs))


@dataclass(frozen=True)
class CellSpace:
    cells: tuple[IntervalCell, ...]
    partitions: tuple[tuple[Interval, ...], ...]
    assignment: np.ndarray            # (n_states,) -> cell_id
    converged: bool = True
    unmet: tuple[str, ...] = ()
    iteration_log: tuple[dict, ...] = ()

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_mean_theta(self, theta: np.ndarray) -> np.ndarray:
        """(n_cells, J) mean normalized semantic vector per cell."""
        J = theta.shape[1]
        sums = np.zeros((self.n_cells, J))
        np.add.at(sums, self.assignment, theta)
        counts = np.bincount(self.assignment, minlength=self.n_cells).astype(float)
        return sums / counts[:, None]


def assign_dimension(partition: Sequence[Interval], values: np.ndarray) -> np.ndarray:
    """Interval index per value; boundary values tie to the lower interval,
    values outside every interval clamp to the nearest end."""
    edges = np.array([iv.hi for iv in partition])
    idx = np.searchsorted(edges, np.asarray(values, dtype=float), side="left")
    return np.clip(idx, 0, len(partition) - 1)


def build_cells(theta: np.ndarray, partitions: Sequence[Sequence[Interval]]) -> CellSpace:
    """Assign each state to the Cartesian cell containing its theta; only
    occupied cells are materialized, ordered by grid index tuple. A cell
    built on an underfull interval in any dimension inherits the flag."""
    n, J = theta.shape
    if len(partitions) != J:
        raise ValueError(f"got {len(partitions)} partitions for {J} dimensions")
    per_dim = np.empty((n, J), dtype=np.int64)
    for j, part in enumerate(partitions):
        per_dim[:, j] = assign_dimension(part, theta[:, j])
    tuples, assignment = np.unique(per_dim, axis=0, return_inverse=True)
    assignment = assignment.reshape(-1)
    # np.unique sorts rows lexicographically, which fixes cell ids
    cells = []
    order = np.argsort(assignment, kind="stable")
    boundaries = np.searchsorted(assignment[order], np.arange(tuples.shape[0]))
    boundaries = np.append(boundaries, n)
    for cid in range(tuples.shape[0]):
        idx = tuple(int(v) for v in tuples[cid])
        members = order[boundaries[cid]:boundaries[cid + 1]]
        lows = tuple(partitions[j][idx[j]].lo for j in range(J))
        highs = tuple(partitions[j][idx[j]].hi for j in range(J))
        flags = ("underfull",) if any(partitions[j][idx[j]].underfull
                                      for j in range(J)) else ()
        cells.append(IntervalCell(cid, idx, idx, idx, lows, highs,
                                  np.sort(members), flags))
    return CellSpace(tuple(cells), tuple(tuple(p) for p in partitions),
                     assignment.astype(np.int64))


def merge_small_cells(cs: CellSpace, n_min_count: int) -> CellSpace:
    """Small-cell rule: cells below the occupancy floor are merged into a
    face-adjacent cell when the union stays a box (same index ranges in all
    other dimensions, adjacent ranges in the merge dimension); cells with no
    such neighbor keep an `underfull` flag."""
    cells = {c.cell_id: {"index": c.index, "idx_lo": list(c.idx_lo),
                         "idx_hi": list(c.idx_hi),
                         "lows": list(c.lows), "highs": list(c.highs),
                         "members": c.member_ids,
                         "flags": set(c.flags)} for c in cs.cells}
    J = len(cs.partitions)
    tuple_owner = {c.index: c.cell_id for c in cs.cells}

    def box_tuples(rec):
        # all grid tuples covered by a cell record
        ranges = [range(lo, hi + 1) for lo, hi in zip(rec["idx_lo"], rec["idx_hi"])]
        out = [()]
        for r in ranges:
            out = [t + (v,) for t in out for v in r]
        return out

    changed = True
    while changed:
        changed = False
        small = sorted((cid for cid, rec in cells.items()
                        if rec["members"].shape[0] < n_min_count),
                       key=lambda cid: cells[cid]["index"])
        for cid in small:
            if cid not in cells or cells[cid]["members"].shape[0] >= n_min_count:
                continue
            rec = cells[cid]
            candidates = []
            for j in range(J):
                for side, probe in ((0, rec["idx_lo"][j] - 1), (1, rec["idx_hi"][j] + 1)):
                    t = list(rec["index"])
                    t[j] = probe
                    owner = tuple_owner.get(tuple(t))
                    if owner is None or owner == cid:
                        continue
                    other = cells[owner]
                    # union stays a box iff all other dims line up exactly
                    ok = all(other["idx_lo"][jj] == rec["idx_lo"][jj]
                             and other["idx_hi"][jj] == rec["idx_hi"][jj]
                             for jj in range(J) if jj != j)
                    edge = other["idx_hi"][j] + 1 == rec["idx_lo"][j] if side == 0 \
                        else other["idx_lo"][j] - 1 == rec["idx_hi"][j]
                    if ok and edge:
                        candidates.append((owner, j))
            if not candidates:
                continue
            owner, j = min(candidates,
                           key=lambda oj: (-cells[oj[0]]["members"].shape[0],
                                           cells[oj[0]]["index"]))
            absorber = cells[owner]
            absorber["idx_lo"][j] = min(absorber["idx_lo"][j], rec["idx_lo"][j])
            absorber["idx_hi"][j] = max(absorber["idx_hi"][j], rec["idx_hi"][j])
            absorber["lows"][j] = min(absorber["lows"][j], rec["lows"][j])
            absorber["highs"][j] = max(absorber["highs"][j], rec["highs"][j])
            absorber["members"] = np.sort(np.concatenate([absorber["members"],
                                                          rec["members"]]))
            # the union box can outgrow d_max, so the absorber leaves the
            # plain-grid guarantees behind along with the swallowed cell
            absorber["flags"] |= rec["flags"] | {"merged"}
            for t in box_tuples(rec):
                tuple_owner[t] = owner
            del cells[cid]
            changed = True

    ordered = sorted(cells.items(), key=lambda kv: kv[1]["index"])
    remap = {}
    new_cells = []
    for new_id, (old_id, rec) in enumerate(ordered):
        remap[old_id] = new_id
        if rec["members"].shape[0] < n_min_count:
            rec["flags"].add("underfull")
        flags = tuple(sorted(rec["flags"]))
        new_cells.append(IntervalCell(
            new_id, rec["index"], tuple(rec["idx_lo"]), tuple(rec["idx_hi"]),
            tuple(rec["lows"]), tuple(rec["highs"]), rec["members"], flags))
    assignment = np.empty_like(cs.assignment)
    for new_id, cell in enumerate(new_cells):
        assignment[cell.member_ids] = new_id
    return replace(cs, cells=tuple(new_cells), assignment=assignment)


def assign_states(cs: CellSpace, theta: np.ndarray) -> np.ndarray:
    """Cell id per normalized semantic row, for data the space was not fit on.

    Per-dimension interval lookup first (boundary ties to the lower interval,
    out-of-range clamps to the end intervals); rows whose index combination
    was never occupied during fitting fall back to the nearest cell box by
    Euclidean distance, ties to the lowest cell id.
    """
    theta = np.asarray(theta, dtype=float)
    n, J = theta.shape
    if len(cs.partitions) != J:
        raise ValueError(f"got {J} dimensions for a {len(cs.partitions)}-dim space")
    per_dim = np.empty((n, J), dtype=np.int64)
    for j, part in enumerate(cs.partitions):
        per_dim[:, j] = assign_dimension(part, theta[:, j])
    cover: dict[tuple[int, ...], int] = {}
    for cell in cs.cells:
        ranges = [range(lo, hi + 1) for lo, hi in zip(cell.idx_lo, cell.idx_hi)]
        for tup in itertools.product(*ranges):
            cover[tup] = cell.cell_id
    out = np.empty(n, dtype=np.int64)
    misses = []
    for i in range(n):
        cid = cover.get(tuple(int(v) for v in per_dim[i]))
        if cid is None:
            misses.append(i)
        else:
            out[i] = cid
    if misses:
        lows = np.array([c.lows for c in cs.cells])
        highs = np.array([c.highs for c in cs.cells])
        pts = theta[misses]
        gap = (np.maximum(lows[None, :, :] - pts[:, None, :], 0.0)
               + np.maximum(pts[:, None, :] - highs[None, :, :], 0.0))
        out[misses] = np.einsum("ikj,ikj->ik", gap, gap).argmin(axis=1)
    return out


def compute_errors(cs: CellSpace, theta: np.ndarray) -> tuple[float, float]:
    """Dataset-wide mean and max per-dimension deviation from cell means."""
    if cs.n_cells == 0:
        raise ValueError("cell space is empty")
    means = cs.cell_mean_theta(theta)
    dev = np.abs(theta - means[cs.assignment])
    return float(dev.mean()), float(dev.max())


def reduction_level(cs: CellSpace, n_states: int | None = None) -> float:
    """|cells| / |modeling states|."""
    n = cs.assignment.shape[0] if n_states is None else n_states
    return cs.n_cells / n


# ---------------------------------------------------------------------------
# refinement loop


def refine(frame: SemanticFrame, config) -> CellSpace:
    """Iterate partition -> map -> error -> reduction until the thresholds
    and the reduction band hold, shrinking d_max (x0.8) on error or
    under-coverage violations and growing d_max and n_min (x1.25) when the
    reduction overshoots the band; best-so-far by (violations, e_mean)."""
    theta = frame.theta
    n = frame.n_states
    d_min = np.array(config.d_min, dtype=float)
    d_max = np.array(config.d_max, dtype=float)
    if d_min.shape[0] != frame.J:
        raise ValueError(f"config has {d_min.shape[0]} d_min entries for J={frame.J}")
    n_min = config.n_min
    lo, hi = config.reduction_band

    best: CellSpace | None = None
    best_key = None
    best_unmet: tuple[str, ...] = ()
    log: list[dict] = []

    for it in range(1, config.max_iters + 1):
        n_min_count = max(1, math.ceil(n_min * n))
        partitions = [partition_dimension(theta[:, j], float(d_min[j]),
                                          float(d_max[j]), n_min_count)
                      for j in range(frame.J)]
        cs = build_cells(theta, partitions)
        cs = merge_small_cells(cs, n_min_count)
        e_mean, e_max = compute_errors(cs, theta)
        red = reduction_level(cs, n)

        unmet = []
        if e_mean > config.e_mean:
            unmet.append(f"e_mean {e_mean:.6f} > {config.e_mean}")
        if e_max > config.e_max:
            unmet.append(f"e_max {e_max:.6f} > {config.e_max}")
        if red < lo:
            unmet.append(f"reduction {red:.4f} < band lo {lo}")
        elif red > hi:
            unmet.append(f"reduction {red:.4f} > band hi {hi}")

        log.append({"iteration": it, "d_max": [float(v) for v in d_max],
                    "n_min": float(n_min), "n_min_count": n_min_count,
                    "n_cells": cs.n_cells, "e_mean": e_mean, "e_max": e_max,
                    "reduction": red, "violations": list(unmet)})

        key = (len(unmet), e_mean)
        if best_key is None or key < best_key:
            best, best_key, best_unmet = cs, key, tuple(unmet)

        if not unmet:
            return replace(cs, converged=True, unmet=(), iteration_log=tuple(log))

        errors_violated = e_mean > config.e_mean or e_max > config.e_max
        if errors_violated or red < lo:
            d_max = np.maximum(d_max * 0.8, d_min)
        if red > hi:
            n_min = min(n_min * 1.25, 0.999)
            if not errors_violated:
                d_max = np.minimum(d_max * 1.25, 1.0)

    assert best is not None
    return replace(best, converged=False, unmet=best_unmet, iteration_log=tuple(log))
