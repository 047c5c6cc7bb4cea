"""Trajectory loading, validation, annotation, and episode-atomic splitting.

Datasets are stored column-wise as numpy arrays with episodes as contiguous
index runs; single states materialize on demand as ConcreteState views.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .core import ConcreteState


class IngestError(ValueError):
    """Malformed trajectory file or schema mismatch."""


@dataclass(frozen=True)
class TrajectoryDataset:
    feature_names: tuple[str, ...]
    label_names: tuple[str, ...]
    episode_ids: np.ndarray        # (n,) int
    t: np.ndarray                  # (n,) int
    features: np.ndarray           # (n, m) float
    actions: np.ndarray            # (n, d) float
    rewards: np.ndarray            # (n,) float
    terminal: np.ndarray           # (n,) bool
    labels: np.ndarray             # (n, L) bool, column order = label_names
    episodes: tuple[tuple[int, int], ...]  # half-open [start, end) index runs
    provenance: tuple[str, str] = ("<memory>", "")
    v_hat: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return int(self.episode_ids.shape[0])

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    def state(self, i: int) -> ConcreteState:
        return ConcreteState(
            episode_id=int(self.episode_ids[i]),
            t=int(self.t[i]),
            features=tuple(float(v) for v in self.features[i]),
            action=tuple(float(v) for v in self.actions[i]),
            reward=float(self.rewards[i]),
            terminal=bool(self.terminal[i]),
            labels={name: bool(self.labels[i, j]) for j, name in enumerate(self.label_names)},
        )

    def label_column(self, name: str) -> np.ndarray:
        try:
            j = self.label_names.index(name)
        except ValueError:
            raise KeyError(f"unknown label {name!r}; dataset has {self.label_names}") from None
        return self.labels[:, j]

    def subset(self, episode_indices: Sequence[int]) -> "TrajectoryDataset":
        """New dataset containing the given episodes, original order preserved."""
        idx = sorted(int(i) for i in episode_indices)
        rows = np.concatenate([np.arange(*self.episodes[i]) for i in idx]) if idx else \
            np.zeros(0, dtype=int)
        episodes = []
        offset = 0
        for i in idx:
            start, end = self.episodes[i]
            episodes.append((offset, offset + (end - start)))
            offset += end - start
        return TrajectoryDataset(
            feature_names=self.feature_names,
            label_names=self.label_names,
            episode_ids=self.episode_ids[rows],
            t=self.t[rows],
            features=self.features[rows],
            actions=self.actions[rows],
            rewards=self.rewards[rows],
            terminal=self.terminal[rows],
            labels=self.labels[rows],
            episodes=tuple(episodes),
            provenance=self.provenance,
            v_hat=None if self.v_hat is None else self.v_hat[rows],
        )


def content_hash(ds: TrajectoryDataset) -> str:
    """Digest of the numerical content, independent of the source file."""
    h = hashlib.sha256()
    h.update(",".join(ds.feature_names).encode("utf-8"))
    h.update(b"|")
    h.update(",".join(ds.label_names).encode("utf-8"))
    for arr in (ds.episode_ids, ds.t, ds.features, ds.actions, ds.rewards,
                ds.terminal, ds.labels):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _validate_structure(ds: TrajectoryDataset) -> None:
    for start, end in ds.episodes:
        if end <= start:
            raise IngestError("empty episode run")
        steps = ds.t[start:end]
        if not np.all(np.diff(steps) > 0):
            eid = int(ds.episode_ids[start])
            raise IngestError(f"step index not strictly increasing within episode {eid}")
        term = ds.terminal[start:end]
        if term[:-1].any() or not term[-1]:
            eid = int(ds.episode_ids[start])
            raise IngestError(f"episode {eid} must have exactly one terminal state, at its end")
    ids = ds.episode_ids
    run_ids = [int(ids[s]) for s, _ in ds.episodes]
    if len(set(run_ids)) != len(run_ids):
        raise IngestError("episode ids reappear in non-contiguous runs")


def dataset_from_rows(rows: list[dict], feature_names: Sequence[str],
                      label_names: Sequence[str], provenance=("<memory>", "")) -> TrajectoryDataset:
    """Assemble and validate a dataset from parsed row dicts (loader backend)."""
    if not rows:
        raise IngestError("no episodes: input contains no rows")
    n = len(rows)
    m = len(feature_names)
    d = len(rows[0]["action"])
    feature_names = tuple(feature_names)
    label_names = tuple(label_names)

    episode_ids = np.empty(n, dtype=np.int64)
    t = np.empty(n, dtype=np.int64)
    features = np.empty((n, m), dtype=float)
    actions = np.empty((n, d), dtype=float)
    rewards = np.empty(n, dtype=float)
    terminal = np.empty(n, dtype=bool)
    labels = np.zeros((n, len(label_names)), dtype=bool)

    for i, row in enumerate(rows):
        episode_ids[i] = row["episode"]
        t[i] = row["t"]
        features[i] = [row["features"][name] for name in feature_names]
        if len(row["action"]) != d:
            raise IngestError(f"line {row['line']}: action dimension {len(row['action'])} != {d}")
        actions[i] = row["action"]
        rewards[i] = row["reward"]
        terminal[i] = row["terminal"]
        labels[i] = [bool(row["labels"].get(name, False)) for name in label_names]

    episodes = []
    start = 0
    for i in range(1, n + 1):
        if i == n or episode_ids[i] != episode_ids[start]:
            episodes.append((start, i))
            start = i

    ds = TrajectoryDataset(feature_names, label_names, episode_ids, t, features,
                           actions, rewards, terminal, labels, tuple(episodes), provenance)
    _validate_structure(ds)
    return ds


def _parse_jsonl(path: str, expected_features: Sequence[str] | None):
    rows = []
    feature_names: list[str] | None = None
    label_names: list[str] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"line {lineno}: malformed JSON row: {exc}") from None
            missing = [k for k in ("episode", "t", "features", "action", "reward",
                                   "terminal", "labels") if k not in obj]
            if missing:
                raise IngestError(f"line {lineno}: missing column(s): {', '.join(missing)}")
            if feature_names is None:
                feature_names = (list(expected_features) if expected_features
                                 else sorted(obj["features"]))
                label_names = sorted(obj["labels"])
            gap = [k for k in feature_names if k not in obj["features"]]
            if gap:
                raise IngestError(f"line {lineno}: missing feature column(s): {', '.join(gap)}")
            rows.append({
                "line": lineno,
                "episode": int(obj["episode"]),
                "t": int(obj["t"]),
                "features": {k: float(v) for k, v in obj["features"].items()},
                "action": [float(v) for v in obj["action"]],
                "reward": float(obj["reward"]),
                "terminal": bool(obj["terminal"]),
                "labels": {k: bool(v) for k, v in obj["labels"].items()},
            })
    if not rows:
        raise IngestError("no episodes: input file is empty")
    return rows, feature_names, label_names


def _parse_csv(path: str, expected_features: Sequence[str] | None):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("no episodes: input file is empty") from None
        if header[:2] != ["episode", "t"] or "reward" not in header:
            raise IngestError("CSV header must start with episode,t and contain reward")
        r_idx = header.index("reward")
        term_idx = header.index("terminal")
        if term_idx != r_idx + 1:
            raise IngestError("CSV header must place terminal immediately after reward")
        mid = header[2:r_idx]
        action_cols = [c for c in mid if c.startswith("action_")]
        feature_names = [c for c in mid if not c.startswith("action_")]
        if expected_features:
            gap = [k for k in expected_features if k not in feature_names]
            if gap:
                raise IngestError(f"missing feature column(s): {', '.join(gap)}")
            feature_names = list(expected_features)
        label_names = header[term_idx + 1:]
        col = {name: header.index(name) for name in header}
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise IngestError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                rows.append({
                    "line": lineno,
                    "episode": int(rec[0]),
                    "t": int(rec[1]),
                    "features": {k: float(rec[col[k]]) for k in feature_names},
                    "action": [float(rec[col[c]]) for c in action_cols],
                    "reward": float(rec[r_idx]),
                    "terminal": bool(int(rec[term_idx])),
                    "labels": {k: bool(int(rec[col[k]])) for k in label_names},
                })
            except ValueError as exc:
                raise IngestError(f"line {lineno}: malformed row: {exc}") from None
    if not rows:
        raise IngestError("no episodes: input file has a header but no rows")
    return rows, feature_names, label_names


def load_trajectories(path, feature_names: Sequence[str] | None = None) -> TrajectoryDataset:
    """Load a JSONL (default) or CSV (by .csv extension) trajectory file.

    feature_names, when given, fixes the feature column order and is
    validated against every row; otherwise JSONL feature keys are taken in
    sorted order from the first row.
    """
    path = str(path)
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    if path.endswith(".csv"):
        rows, feats, labs = _parse_csv(path, feature_names)
    else:
        rows, feats, labs = _parse_jsonl(path, feature_names)
    return dataset_from_rows(rows, feats, labs, provenance=(path, digest))


def split_dataset(ds: TrajectoryDataset, ratio: tuple[int, int],
                  seed: int) -> tuple[TrajectoryDataset, TrajectoryDataset]:
    """Episode-atomic split, deterministic per seed.

    Validation gets floor(n_episodes * ratio[1] / sum(ratio)) episodes, the
    remainder goes to modeling.
    """
    if ds.n_episodes < 2:
        raise IngestError("cannot split a dataset with fewer than 2 episodes")
    r_model, r_val = ratio
    if r_model <= 0 or r_val <= 0:
        raise IngestError("split ratio parts must be positive")
    n_val = int(np.floor(ds.n_episodes * r_val / (r_model + r_val)))
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n_episodes)
    val_idx = set(int(i) for i in order[:n_val])
    model_idx = [i for i in range(ds.n_episodes) if i not in val_idx]
    return ds.subset(model_idx), ds.subset(sorted(val_idx))


def annotate_returns(ds: TrajectoryDataset, gamma: float) -> TrajectoryDataset:
    """Discounted Monte-Carlo return per state, computed backward per episode.

    v_hat(s_t) = r_t + gamma * v_hat(s_{t+1}); the terminal state keeps only
    its own reward contribution.
    """
    if not (0 < gamma < 1):
        raise ValueError("gamma must be in (0,1)")
    v = np.zeros(ds.n_states, dtype=float)
    for start, end in ds.episodes:
        acc = 0.0
        for i in range(end - 1, start - 1, -1):
            acc = float(ds.rewards[i]) + gamma * acc
            v[i] = acc
    return replace(ds, v_hat=v)
