"""Abstract-policy guidance for a tabular learner.

The abstract MDP yields a greedy finite-horizon policy; during training its
representative action is blended with the learner's action and the blend is
executed. The learner itself is plain Q-learning over the interval-cell
state set and the interval-box action set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .actions import ActionAbstraction, representative_action
from .core import NormalizationBounds, SemanticMapping, normalize
from .intervals import CellSpace, assign_dimension
from .mdp import AbstractMdp


@dataclass(frozen=True)
class StateMapper:
    """Observation -> interval cell -> abstract state, cached for step use."""

    semantics: SemanticMapping
    bounds: NormalizationBounds
    space: CellSpace
    cluster_labels: np.ndarray
    feature_names: tuple[str, ...]
    _cover: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for cell in self.space.cells:
            ranges = [range(lo, hi + 1)
                      for lo, hi in zip(cell.idx_lo, cell.idx_hi)]
            for tup in itertools.product(*ranges):
                self._cover[tup] = cell.cell_id

    def cell_of(self, obs: Mapping[str, float]) -> tuple[int, bool]:
        """Cell id plus a flag set when the observation left the fitted
        region (bounds clamp or unoccupied grid combination)."""
        vec = np.array([[float(obs[n]) for n in self.feature_names]])
        raw = self.semantics.evaluate(self.feature_names, vec)
        clamped = bool((raw < self.bounds.mins).any()
                       or (raw > self.bounds.maxs).any())
        theta = normalize(raw, self.bounds)
        key = tuple(int(assign_dimension(part, theta[:, j])[0])
                    for j, part in enumerate(self.space.partitions))
        cid = self._cover.get(key)
        if cid is None:
            lows = np.array([c.lows for c in self.space.cells])
            highs = np.array([c.highs for c in self.space.cells])
            gap = (np.maximum(lows - theta, 0.0)
                   + np.maximum(theta - highs, 0.0))
            cid = int((gap * gap).sum(axis=1).argmin())
            clamped = True
        return int(cid), clamped

    def state_of(self, obs: Mapping[str, float]) -> tuple[int, bool]:
        cell, clamped = self.cell_of(obs)
        return int(self.cluster_labels[cell]), clamped


def greedy_policy(mdp: AbstractMdp, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Greedy abstract action per state under the horizon-step max-reward
    value function; ties resolve to the lowest action index. The second
    array flags degenerate states (synthetic absorbers)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n = mdp.n_states
    v = np.zeros(n)
    best = np.zeros(n, dtype=np.int64)
    for _ in range(horizon):
        q = mdp.pair_reward + np.add.reduceat(mdp.probs * v[mdp.cols],
                                              mdp.row_ptr[:-1])
        v_next = np.full(n, -np.inf)
        np.maximum.at(v_next, mdp.pair_state, q)
        first = np.full(n, q.size, dtype=np.int64)
        hit = np.flatnonzero(q >= v_next[mdp.pair_state])
        np.minimum.at(first, mdp.pair_state[hit], hit)
        best = mdp.pair_action[first]
        v = v_next
    degenerate = np.zeros(n, dtype=bool)
    degenerate[list(mdp.degenerate)] = True
    return best.astype(np.int64), degenerate


def abstract_policy_action(mdp: AbstractMdp, obs: Mapping[str, float],
                           mapper: StateMapper, actions: ActionAbstraction,
                           horizon: int) -> tuple[np.ndarray, bool]:
    """Representative action of the greedy abstract action at the mapped
    state. The flag marks degraded answers: a degenerate absorbing state
    (zero action returned) or an out-of-region observation."""
    state, clamped = mapper.state_of(obs)
    best, degenerate = greedy_policy(mdp, horizon)
    if degenerate[state]:
        zero = np.clip(np.zeros(actions.dim), actions.lows, actions.highs)
        return zero, True
    rep = representative_action(actions, actions.unflatten(int(best[state])))
    return np.asarray(rep, dtype=float), clamped


def blend_action(a_nn, a_mdp, alpha: float, beta: float,
                 lows, highs) -> np.ndarray:
    """alpha * a_nn + beta * a_mdp, clamped to the action range."""
    a_nn = np.asarray(a_nn, dtype=float)
    a_mdp = np.asarray(a_mdp, dtype=float)
    if a_nn.shape != a_mdp.shape:
        raise ValueError("action dimension mismatch")
    return np.clip(alpha * a_nn + beta * a_mdp, lows, highs)


@dataclass(frozen=True)
class LearningCurve:
    returns: np.ndarray
    arm: str
    seed: int

    def to_csv_rows(self) -> list[str]:
        return [f"{i},{r!r},{self.arm},{self.seed}"
                for i, r in enumerate(self.returns)]


def episodes_to_threshold(returns, threshold: float) -> int:
    """1-based index of the first episode at or above threshold; one past
    the end when the curve never reaches it."""
    arr = np.asarray(returns, dtype=float)
    hits = np.flatnonzero(arr >= threshold)
    return int(hits[0]) + 1 if hits.size else arr.size + 1


def train_guided(env, mapper: StateMapper, actions: ActionAbstraction,
                 mdp: AbstractMdp | None, *, seed: int, episodes: int,
                 alpha: float = 0.5, beta: float = 0.5, lr: float = 0.1,
                 eps_start: float = 0.1, eps_end: float = 0.01,
                 gamma: float = 0.95) -> LearningCurve:
    """Tabular Q-learning over (interval cell, interval-box action).

    With an mdp and beta != 0 the executed action is the Eq-style blend of
    the learner's representative action and the abstract policy's; the
    learner still updates on its own chosen action. With no mdp (or beta
    exactly 0) the learner's action is executed unchanged, which keeps the
    two arms bit-identical under a shared seed.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    guided = mdp is not None and beta != 0.0
    if guided:
        policy, degenerate = greedy_policy(mdp, env.horizon)
        reps = np.array([representative_action(actions, actions.unflatten(a))
                         for a in range(actions.n_abstract)])
    rng = np.random.default_rng(seed)
    n_actions = actions.n_abstract
    q = np.zeros((mapper.space.n_cells, n_actions))
    lows = np.asarray(actions.lows)
    highs = np.asarray(actions.highs)
    returns = np.empty(episodes)

    for ep in range(episodes):
        eps = eps_start + (eps_end - eps_start) * (ep / max(1, episodes - 1))
        obs = env.reset(int(rng.integers(2 ** 31)))
        total = 0.0
        done = False
        while not done:
            cell, _ = mapper.cell_of(obs)
            if rng.random() < eps:
                act = int(rng.integers(n_actions))
            else:
                act = int(q[cell].argmax())
            a_nn = np.asarray(representative_action(actions,
                                                    actions.unflatten(act)))
            if guided:
                state = int(mapper.cluster_labels[cell])
                if degenerate[state]:
                    a_exec = a_nn
                else:
                    a_exec = blend_action(a_nn, reps[policy[state]],
                                          alpha, beta, lows, highs)
            else:
                a_exec = a_nn
            obs2, reward, done = env.step(a_exec)
            cell2, _ = mapper.cell_of(obs2)
            target = reward if done else reward + gamma * float(q[cell2].max())
            q[cell, act] += lr * (target - q[cell, act])
            total += reward
            obs = obs2
        returns[ep] = total
    return LearningCurve(returns=returns, arm="guided" if guided else "baseline",
                         seed=seed)
