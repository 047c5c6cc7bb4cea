"""Abstract MDP assembly from clustered cells and recorded transitions.

Weights are empirical visitation frequencies, so the pooled reward and
transition estimates reduce to plain maximum-likelihood counts over all
member transitions. Hoeffding half-widths act as a support filter: pairs
whose bound exceeds p_tol are dropped and reported, and a state left with
no action becomes an absorbing self-loop flagged degenerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .actions import ActionAbstraction, abstract_action
from .intervals import CellSpace, SemanticFrame

__all__ = [
    "AbstractMdp",
    "PrunedPair",
    "hoeffding_bound",
    "build_abstract_mdp",
    "attach_labels",
    "mdp_from_tables",
]


def hoeffding_bound(n: int, delta: float) -> float:
    """Half-width sqrt(ln(2/delta) / (2n)) of the two-sided Hoeffding bound."""
    if n < 1:
        raise ValueError("hoeffding_bound needs n >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


@dataclass(frozen=True)
class PrunedPair:
    state: int
    action: int
    count: int
    bound: float


@dataclass(frozen=True)
class AbstractMdp:
    """Finite MDP over abstract states with a sparse CSR pair layout.

    Retained (state, action) pairs are flattened: pair_state/pair_action/
    pair_reward/pair_count align, and row_ptr slices cols/probs per pair.
    Pairs are sorted by (state, action) and every state owns at least one
    pair; synthetic self-loops added for pruned-empty states carry count 0
    and their states are listed in degenerate.
    """

    n_states: int
    action_space: int
    gamma: float
    init: np.ndarray
    pair_state: np.ndarray
    pair_action: np.ndarray
    pair_reward: np.ndarray
    pair_count: np.ndarray
    row_ptr: np.ndarray
    cols: np.ndarray
    probs: np.ndarray
    labels: dict[str, np.ndarray] = field(default_factory=dict)
    degenerate: tuple[int, ...] = ()
    pruned: tuple[PrunedPair, ...] = ()

    @property
    def n_pairs(self) -> int:
        return self.pair_state.shape[0]

    def pairs_of(self, state: int) -> range:
        lo = int(np.searchsorted(self.pair_state, state, side="left"))
        hi = int(np.searchsorted(self.pair_state, state, side="right"))
        return range(lo, hi)

    def actions_of(self, state: int) -> tuple[int, ...]:
        return tuple(int(self.pair_action[p]) for p in self.pairs_of(state))

    def row(self, state: int, action: int) -> dict[int, float]:
        for p in self.pairs_of(state):
            if self.pair_action[p] == action:
                return {int(c): float(q) for c, q in
                        zip(self.cols[self.row_ptr[p]:self.row_ptr[p + 1]],
                            self.probs[self.row_ptr[p]:self.row_ptr[p + 1]])}
        raise KeyError(f"no retained pair ({state}, {action})")

    def reward(self, state: int, action: int) -> float:
        for p in self.pairs_of(state):
            if self.pair_action[p] == action:
                return float(self.pair_reward[p])
        raise KeyError(f"no retained pair ({state}, {action})")

    def to_jsonable(self) -> dict:
        pairs = []
        for p in range(self.n_pairs):
            row = [[int(c), float(q)] for c, q in
                   zip(self.cols[self.row_ptr[p]:self.row_ptr[p + 1]],
                       self.probs[self.row_ptr[p]:self.row_ptr[p + 1]])]
            pairs.append({"s": int(self.pair_state[p]),
                          "a": int(self.pair_action[p]),
                          "r": float(self.pair_reward[p]),
                          "n": int(self.pair_count[p]),
                          "row": row})
        return {
            "n_states": self.n_states,
            "action_space": self.action_space,
            "gamma": self.gamma,
            "init": [float(x) for x in self.init],
            "pairs": pairs,
            "labels": {name: [int(b) for b in mask]
                       for name, mask in sorted(self.labels.items())},
            "degenerate": list(self.degenerate),
            "pruned": [[p.state, p.action, p.count, p.bound] for p in self.pruned],
        }

    @staticmethod
    def from_jsonable(doc: Mapping) -> "AbstractMdp":
        table = {}
        rewards = {}
        counts = {}
        for p in doc["pairs"]:
            key = (int(p["s"]), int(p["a"]))
            table[key] = {int(c): float(q) for c, q in p["row"]}
            rewards[key] = float(p["r"])
            counts[key] = int(p["n"])
        mdp = mdp_from_tables(
            transitions=table, rewards=rewards,
            init=np.asarray(doc["init"], dtype=float),
            n_states=int(doc["n_states"]),
            action_space=int(doc["action_space"]),
            gamma=float(doc["gamma"]),
            labels={name: np.asarray(mask, dtype=bool)
                    for name, mask in doc.get("labels", {}).items()},
            counts=counts,
        )
        return replace(mdp,
                       degenerate=tuple(int(s) for s in doc.get("degenerate", ())),
                       pruned=tuple(PrunedPair(int(s), int(a), int(n), float(b))
                                    for s, a, n, b in doc.get("pruned", ())))


def _assemble(entries: dict[tuple[int, int], tuple[float, int, dict[int, float]]],
              n_states: int) -> tuple[np.ndarray, ...]:
    keys = sorted(entries)
    n_pairs = len(keys)
    pair_state = np.array([k[0] for k in keys], dtype=np.int64)
    pair_action = np.array([k[1] for k in keys], dtype=np.int64)
    pair_reward = np.array([entries[k][0] for k in keys], dtype=np.float64)
    pair_count = np.array([entries[k][1] for k in keys], dtype=np.int64)
    row_ptr = np.zeros(n_pairs + 1, dtype=np.int64)
    for i, k in enumerate(keys):
        row_ptr[i + 1] = row_ptr[i] + len(entries[k][2])
    cols = np.empty(int(row_ptr[-1]), dtype=np.int64)
    probs = np.empty(int(row_ptr[-1]), dtype=np.float64)
    pos = 0
    for k in keys:
        for dst, q in sorted(entries[k][2].items()):
            cols[pos] = dst
            probs[pos] = q
            pos += 1
    return pair_state, pair_action, pair_reward, pair_count, row_ptr, cols, probs


def build_abstract_mdp(frame: SemanticFrame, space: CellSpace,
                       cluster_labels: np.ndarray, actions: ActionAbstraction,
                       gamma: float, delta: float,
                       p_tol: float | None = 0.25) -> AbstractMdp:
    """Pool recorded transitions into the abstract model.

    cluster_labels maps cell id -> abstract state id. Pass p_tol=None to
    disable the Hoeffding filter entirely.
    """
    ds = frame.dataset
    assign = space.assignment
    phi = np.asarray(cluster_labels, dtype=np.int64)[assign]
    n_states = int(phi.max()) + 1 if phi.size else 0

    flat = np.array([actions.flat_index(abstract_action(actions, ds.actions[i]))
                     for i in range(ds.n_states)], dtype=np.int64)

    acc: dict[tuple[int, int], list] = {}
    starts = np.zeros(n_states, dtype=np.float64)
    for start, end in ds.episodes:
        starts[phi[start]] += 1.0
        for i in range(start, end - 1):
            key = (int(phi[i]), int(flat[i]))
            ent = acc.get(key)
            if ent is None:
                ent = [0, 0.0, {}]
                acc[key] = ent
            ent[0] += 1
            ent[1] += float(ds.rewards[i])
            dst = int(phi[i + 1])
            ent[2][dst] = ent[2].get(dst, 0) + 1
    init = starts / starts.sum()

    pruned: list[PrunedPair] = []
    entries: dict[tuple[int, int], tuple[float, int, dict[int, float]]] = {}
    for key in sorted(acc):
        n, r_sum, dsts = acc[key]
        bound = hoeffding_bound(n, delta)
        if p_tol is not None and bound > p_tol:
            pruned.append(PrunedPair(key[0], key[1], n, bound))
            continue
        entries[key] = (r_sum / n, n, {d: c / n for d, c in dsts.items()})

    covered = {s for s, _ in entries}
    degenerate = tuple(s for s in range(n_states) if s not in covered)
    for s in degenerate:
        entries[(s, 0)] = (0.0, 0, {s: 1.0})

    arrays = _assemble(entries, n_states)
    return AbstractMdp(n_states=n_states, action_space=actions.n_abstract,
                       gamma=gamma, init=init, pair_state=arrays[0],
                       pair_action=arrays[1], pair_reward=arrays[2],
                       pair_count=arrays[3], row_ptr=arrays[4], cols=arrays[5],
                       probs=arrays[6], labels={}, degenerate=degenerate,
                       pruned=tuple(pruned))


def attach_labels(mdp: AbstractMdp, frame: SemanticFrame, space: CellSpace,
                  cluster_labels: np.ndarray) -> AbstractMdp:
    """Existential label lift: a state carries L iff any member row does."""
    ds = frame.dataset
    phi = np.asarray(cluster_labels, dtype=np.int64)[space.assignment]
    lifted = {}
    for j, name in enumerate(ds.label_names):
        mask = np.zeros(mdp.n_states, dtype=bool)
        hits = np.unique(phi[ds.labels[:, j]])
        mask[hits] = True
        lifted[name] = mask
    return replace(mdp, labels=lifted)


def mdp_from_tables(transitions: Mapping[tuple[int, int], Mapping[int, float]],
                    rewards: Mapping[tuple[int, int], float],
                    init: np.ndarray, n_states: int | None = None,
                    action_space: int | None = None, gamma: float = 0.95,
                    labels: Mapping[str, np.ndarray] | None = None,
                    counts: Mapping[tuple[int, int], int] | None = None
                    ) -> AbstractMdp:
    """Direct constructor from {(s, a): {dst: p}} tables (tests, tiny models)."""
    init = np.asarray(init, dtype=float)
    if n_states is None:
        n_states = init.shape[0]
    if action_space is None:
        action_space = max(a for _, a in transitions) + 1
    entries = {}
    for key, row in transitions.items():
        total = sum(row.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"row {key} sums to {total!r}")
        n = counts.get(key, 1) if counts is not None else 1
        entries[key] = (float(rewards[key]), n, dict(row))
    covered = {s for s, _ in entries}
    missing = [s for s in range(n_states) if s not in covered]
    if missing:
        raise ValueError(f"states without actions: {missing}")
    arrays = _assemble(entries, n_states)
    return AbstractMdp(n_states=n_states, action_space=action_space, gamma=gamma,
                       init=init, pair_state=arrays[0], pair_action=arrays[1],
                       pair_reward=arrays[2], pair_count=arrays[3],
                       row_ptr=arrays[4], cols=arrays[5], probs=arrays[6],
                       labels=dict(labels or {}))
