"""Bounded-horizon probabilistic checking and PRISM interchange.

The internal checker solves the two property shapes used throughout
(minimum expected cumulative reward, maximum bounded reachability) by
backward induction, so no external tool is needed for the pipeline.
Exports are byte-deterministic: probabilities print with 9 decimals and the
largest branch absorbs the rounding residual so every printed row sums to
exactly 1. Setting PRISM_BIN enables an optional cross-check against a real
PRISM binary.
"""

from __future__ import annotations

import os
import re
import subprocess
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import TrajectoryDataset
from .mdp import AbstractMdp, mdp_from_tables

__all__ = [
    "PropertySpec",
    "parse_properties",
    "GapRow",
    "GapReport",
    "export_prism",
    "export_properties",
    "parse_prism",
    "check_bounded_reward_min",
    "check_bounded_reach_max",
    "check_property",
    "empirical_property",
    "semantic_gap",
    "run_prism",
]

_KINDS = ("RminC", "PmaxF")


@dataclass(frozen=True)
class PropertySpec:
    """One bounded property: RminC (cumulative reward) or PmaxF (reach)."""

    kind: str
    horizon: int
    label: str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.kind == "PmaxF" and not self.label:
            raise ValueError("PmaxF needs a label")

    def prism_line(self) -> str:
        if self.kind == "RminC":
            return f'R{{"step"}}min=? [ C<={self.horizon} ]'
        return f'Pmax=? [ F<={self.horizon} "{self.label}" ]'


def parse_properties(docs) -> tuple[PropertySpec, ...]:
    """PropertySpec per config property document."""
    return tuple(PropertySpec(doc["kind"], int(doc["horizon"]), doc.get("label"))
                 for doc in docs)


# -------------------------------------------------------------------- export

_UNIT = 10 ** 9


def _format_prob(units: int) -> str:
    return f"{units // _UNIT}.{units % _UNIT:09d}"


def _row_units(cols: np.ndarray, probs: np.ndarray) -> list[tuple[int, int]]:
    units = [round(float(p) * _UNIT) for p in probs]
    residual = _UNIT - sum(units)
    target = 0
    best = -1.0
    for i, p in enumerate(probs):
        if p >= best:  # ties -> last branch in successor order
            best = float(p)
            target = i
    units[target] += residual
    return [(int(c), u) for c, u in zip(cols, units) if u > 0]


def export_prism(mdp: AbstractMdp, path=None) -> str:
    """Serialize as a PRISM mdp model.

    A point-mass start becomes `init i0` on the variable; anything wider is
    written as an init block over the support states, which PRISM treats as
    a nondeterministic choice rather than our distribution (documented
    limitation of the format).
    """
    point = np.flatnonzero(mdp.init > 0.0)
    single = point.shape[0] == 1
    lines = ["mdp", "", "module abstraction"]
    if single:
        lines.append(f"  s : [0..{mdp.n_states - 1}] init {int(point[0])};")
    else:
        lines.append(f"  s : [0..{mdp.n_states - 1}];")
    for p in range(mdp.n_pairs):
        cols = mdp.cols[mdp.row_ptr[p]:mdp.row_ptr[p + 1]]
        probs = mdp.probs[mdp.row_ptr[p]:mdp.row_ptr[p + 1]]
        branches = " + ".join(f"{_format_prob(u)}:(s'={c})"
                              for c, u in _row_units(cols, probs))
        lines.append(f"  [a{int(mdp.pair_action[p])}] "
                     f"s={int(mdp.pair_state[p])} -> {branches};")
    lines.append("endmodule")
    if not single:
        lines.extend(["", "init",
                      "  " + " | ".join(f"s={int(s)}" for s in point),
                      "endinit"])
    lines.extend(["", 'rewards "step"'])
    for p in range(mdp.n_pairs):
        lines.append(f"  [a{int(mdp.pair_action[p])}] "
                     f"s={int(mdp.pair_state[p])} : {mdp.pair_reward[p]:.9f};")
    lines.append("endrewards")
    if mdp.labels:
        lines.append("")
        for name in sorted(mdp.labels):
            states = np.flatnonzero(mdp.labels[name])
            expr = " | ".join(f"s={int(s)}" for s in states) if states.size else "false"
            lines.append(f'label "{name}" = {expr};')
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def export_properties(specs: Sequence[PropertySpec], path=None,
                      labels: Sequence[str] | None = None) -> str:
    if labels is not None:
        for spec in specs:
            if spec.kind == "PmaxF" and spec.label not in labels:
                raise ValueError(f"unknown label {spec.label!r}")
    text = "".join(spec.prism_line() + "\n" for spec in specs)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


# -------------------------------------------------------------------- reader

_VAR_RE = re.compile(r"^s : \[0\.\.(\d+)\](?: init (\d+))?;$")
_CMD_RE = re.compile(r"^\[a(\d+)\] s=(\d+) -> (.+);$")
_BRANCH_RE = re.compile(r"^([0-9.]+):\(s'=(\d+)\)$")
_REW_RE = re.compile(r"^\[a(\d+)\] s=(\d+) : (-?[0-9.]+);$")
_LABEL_RE = re.compile(r'^label "([^"]+)" = (.+);$')


def parse_prism(text: str) -> AbstractMdp:
    """Read back the exported dialect (not a general PRISM parser).

    A multi-state init block comes back as a uniform distribution over the
    listed states; the set form cannot carry the original weights.
    """
    n_states = None
    init_state = None
    init_set: list[int] = []
    transitions: dict[tuple[int, int], dict[int, float]] = {}
    rewards: dict[tuple[int, int], float] = {}
    labels: dict[str, list[int]] = {}
    in_init = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line in ("mdp", "module abstraction", "endmodule",
                                'rewards "step"', "endrewards"):
            continue
        if line == "init":
            in_init = True
            continue
        if line == "endinit":
            in_init = False
            continue
        if in_init:
            init_set.extend(int(s) for s in re.findall(r"s=(\d+)", line))
            continue
        m = _VAR_RE.match(line)
        if m:
            n_states = int(m.group(1)) + 1
            init_state = int(m.group(2)) if m.group(2) is not None else None
            continue
        m = _CMD_RE.match(line)
        if m:
            key = (int(m.group(2)), int(m.group(1)))
            row = {}
            for part in m.group(3).split(" + "):
                b = _BRANCH_RE.match(part.strip())
                row[int(b.group(2))] = float(b.group(1))
            transitions[key] = row
            continue
        m = _REW_RE.match(line)
        if m:
            rewards[(int(m.group(2)), int(m.group(1)))] = float(m.group(3))
            continue
        m = _LABEL_RE.match(line)
        if m:
            expr = m.group(2)
            labels[m.group(1)] = ([] if expr == "false"
                                  else [int(s) for s in re.findall(r"s=(\d+)", expr)])
            continue
        raise ValueError(f"unrecognized line: {raw!r}")
    if n_states is None:
        raise ValueError("no state variable declaration found")
    init = np.zeros(n_states)
    if init_state is not None:
        init[init_state] = 1.0
    elif init_set:
        init[sorted(set(init_set))] = 1.0 / len(set(init_set))
    else:
        raise ValueError("no initial state information")
    label_masks = {}
    for name, states in labels.items():
        mask = np.zeros(n_states, dtype=bool)
        mask[states] = True
        label_masks[name] = mask
    return mdp_from_tables(transitions, rewards, init, n_states=n_states,
                           labels=label_masks)


# ------------------------------------------------------------------- checker

def _pair_values(mdp: AbstractMdp, v: np.ndarray) -> np.ndarray:
    flow = mdp.probs * v[mdp.cols]
    return np.add.reduceat(flow, mdp.row_ptr[:-1])


def check_bounded_reward_min(mdp: AbstractMdp, horizon: int) -> float:
    """Minimum expected cumulative reward over `horizon` steps from init."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    v = np.zeros(mdp.n_states)
    for _ in range(horizon):
        q = mdp.pair_reward + _pair_values(mdp, v)
        v_next = np.full(mdp.n_states, np.inf)
        np.minimum.at(v_next, mdp.pair_state, q)
        v = v_next
    return float(mdp.init @ v)


def check_bounded_reach_max(mdp: AbstractMdp, label: str, horizon: int) -> float:
    """Maximum probability of reaching `label` within `horizon` steps."""
    if label not in mdp.labels:
        raise KeyError(f"unknown label {label!r}")
    goal = mdp.labels[label]
    v = goal.astype(float)
    for _ in range(horizon):
        q = _pair_values(mdp, v)
        v_next = np.zeros(mdp.n_states)
        np.maximum.at(v_next, mdp.pair_state, q)
        v_next[goal] = 1.0
        v = v_next
    return float(mdp.init @ v)


def check_property(mdp: AbstractMdp, spec: PropertySpec) -> float:
    if spec.kind == "RminC":
        return check_bounded_reward_min(mdp, spec.horizon)
    return check_bounded_reach_max(mdp, spec.label, spec.horizon)


# ------------------------------------------------------------------ gap side

def empirical_property(ds: TrajectoryDataset, spec: PropertySpec) -> float:
    """Property value measured directly on recorded episodes."""
    if ds.n_episodes == 0:
        raise ValueError("empty dataset")
    if spec.kind == "RminC":
        totals = []
        for start, end in ds.episodes:
            t = ds.t[start:end]
            totals.append(float(ds.rewards[start:end][t < spec.horizon].sum()))
        return float(np.mean(totals))
    j = ds.label_names.index(spec.label)
    hits = 0
    for start, end in ds.episodes:
        t = ds.t[start:end]
        if bool(np.any(ds.labels[start:end, j] & (t <= spec.horizon))):
            hits += 1
    return hits / ds.n_episodes


@dataclass(frozen=True)
class GapRow:
    kind: str
    horizon: int
    label: str | None
    verified: float
    empirical: float
    error: float


@dataclass(frozen=True)
class GapReport:
    rows: tuple[GapRow, ...]

    def to_jsonable(self) -> dict:
        return {"rows": [{"kind": r.kind, "horizon": r.horizon, "label": r.label,
                          "verified": r.verified, "empirical": r.empirical,
                          "error": r.error} for r in self.rows]}


def semantic_gap(mdp: AbstractMdp, validation: TrajectoryDataset,
                 specs: Sequence[PropertySpec]) -> GapReport:
    """Verified-versus-measured comparison, one row per property."""
    rows = []
    for spec in specs:
        verified = check_property(mdp, spec)
        empirical = empirical_property(validation, spec)
        rows.append(GapRow(kind=spec.kind, horizon=spec.horizon, label=spec.label,
                           verified=verified, empirical=empirical,
                           error=empirical - verified))
    return GapReport(rows=tuple(rows))


# ------------------------------------------------------------ optional PRISM

def run_prism(model_path, props_path, prism_bin: str | None = None) -> list[float]:
    """Run an external PRISM binary over exported files, one result per line."""
    binary = prism_bin or os.environ.get("PRISM_BIN")
    if not binary:
        raise RuntimeError("PRISM_BIN not configured")
    proc = subprocess.run([binary, str(model_path), str(props_path)],
                          capture_output=True, text=True, timeout=600)
    if proc.returncode != 0:
        raise RuntimeError(f"prism failed: {proc.stderr[-500:]}")
    values = [float(m.group(1)) for m in
              re.finditer(r"^Result: ([0-9eE+.-]+)", proc.stdout, re.MULTILINE)]
    if not values:
        raise RuntimeError("no Result lines in prism output")
    return values
