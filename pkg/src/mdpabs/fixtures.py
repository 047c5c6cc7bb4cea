"""Bundled synthetic car-following dataset and its experiment configuration.

The recorder drives AccEnv with the scripted cruise controller plus small
seeded exploration noise. Rows follow the recording convention: a row
carries the state at step t, the action taken from it, and the reward that
action earned; the terminal row carries a zero action and reward.
"""

from __future__ import annotations

import json

import numpy as np

from .actions import ActionAbstraction, abstract_action
from .core import ExperimentConfig, parse_experiment_config
from .envs import AccEnv, cruise_controller
from .ingest import TrajectoryDataset, dataset_from_rows

FIXTURE_SEED = 20240817
N_EPISODES = 260
NOISE_STD = 0.4
EDGE_MARGIN = 0.05
# Episodes outlive the checked horizons so end-of-recording rows land in the
# same steady-state cells as mid-episode rows. Ending at the property horizon
# would give the final rows their own sparse cells, absorbing chain mass at
# zero reward well before the bounded-reward window closes.
RECORD_HORIZON = 80


def acc_config_doc() -> dict:
    return {
        "name": "acc-fixture",
        "semantics": [
            {"name": "ego_speed", "expr": "v_ego", "unit": "m/s"},
            {"name": "gap", "expr": "gap", "unit": "m"},
        ],
        "actions": [
            {"name": "accel", "low": -8.0, "high": 3.0, "granularity": 2.0},
        ],
        "abstraction": {
            "d_min": [0.002, 0.002],
            "d_max": [0.05, 0.05],
            "n_min": 5e-5,
            "e_mean": 0.005,
            "e_max": 0.01,
            "reduction_band": [0.10, 0.30],
            "gamma": 0.95,
            "delta": 0.05,
            "seed": 7,
            "k_method": "silhouette",
            "k_range": [4, 8, 16, 32, 64],
        },
        "weights": {},
        "split": {"ratio": [8, 2]},
        "properties": [
            {"kind": "RminC", "horizon": 51},
            {"kind": "PmaxF", "horizon": 51, "label": "nearLead"},
            {"kind": "PmaxF", "horizon": 51, "label": "isCrashed"},
        ],
        "guide": {"env": "acc", "episodes": 400, "threshold_fraction": 0.8},
    }


def acc_config() -> ExperimentConfig:
    return parse_experiment_config(acc_config_doc())


def accel_grid() -> ActionAbstraction:
    doc = acc_config_doc()["actions"][0]
    return ActionAbstraction((doc["name"],), (doc["low"],), (doc["high"],),
                             (doc["granularity"],))


def recorded_action(scripted: float, noise_draw: float,
                    grid: ActionAbstraction) -> float:
    """Jitter the scripted command without leaving its acceleration bin.

    The draw is re-centered on the bin midpoint and clipped to the bin
    interior, so every state the controller visits carries exactly one
    abstract action. Recording raw jitter instead would scatter near-boundary
    commands across two bins and hand an adversarial policy a brake-harder
    branch in every busy cell.
    """
    k = abstract_action(grid, (scripted,))[0]
    g = grid.granularities[0]
    lo = grid.lows[0] + k * g
    hi = min(lo + g, grid.highs[0])
    center = 0.5 * (lo + hi)
    return float(np.clip(center + noise_draw,
                         lo + EDGE_MARGIN, hi - EDGE_MARGIN))


def generate_acc_rows(n_episodes: int = N_EPISODES, seed: int = FIXTURE_SEED,
                      noise: float = NOISE_STD) -> list[dict]:
    env = AccEnv(horizon=RECORD_HORIZON)
    grid = accel_grid()
    rng = np.random.default_rng(seed)
    rows: list[dict] = []
    line = 1
    for e in range(n_episodes):
        obs = env.reset(seed + 7919 * e)
        labels = env.labels()
        t = 0
        while True:
            scripted = cruise_controller(obs["gap"], obs["v_ego"])
            draw = float(np.clip(rng.normal(0.0, noise), -0.9, 0.9))
            a = recorded_action(scripted, draw, grid)
            next_obs, reward, done = env.step(np.array([a]))
            rows.append({"episode": e, "t": t, "features": dict(obs),
                         "action": [a], "reward": reward, "terminal": False,
                         "labels": labels, "line": line})
            line += 1
            obs, labels = next_obs, env.labels()
            t += 1
            if done:
                rows.append({"episode": e, "t": t, "features": dict(obs),
                             "action": [0.0], "reward": 0.0, "terminal": True,
                             "labels": labels, "line": line})
                line += 1
                break
    return rows


def acc_dataset(n_episodes: int = N_EPISODES,
                seed: int = FIXTURE_SEED) -> TrajectoryDataset:
    rows = generate_acc_rows(n_episodes, seed)
    return dataset_from_rows(rows, AccEnv.feature_names, AccEnv.label_names,
                             provenance=("<acc-fixture>", f"seed={seed}"))


def write_fixture(data_path, config_path) -> None:
    """Materialize the dataset as JSONL and the configuration as JSON."""
    rows = generate_acc_rows()
    with open(data_path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps({
                "episode": r["episode"], "t": r["t"], "features": r["features"],
                "action": r["action"], "reward": r["reward"],
                "terminal": r["terminal"], "labels": r["labels"],
            }, sort_keys=True) + "\n")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(acc_config_doc(), fh, indent=2, sort_keys=True)
        fh.write("\n")
