import json

import numpy as np
import pytest

from mdpabs.ingest import dataset_from_rows


def make_rows(n_episodes, steps, reward_fn=lambda e, t: 1.0,
              feature_fn=lambda e, t: {"v_ego": 10.0 + t, "gap": 50.0 - t},
              label_fn=lambda e, t, last: {"isCrashed": False},
              action_fn=lambda e, t: [0.0]):
    rows = []
    line = 1
    for e in range(n_episodes):
        for t in range(steps):
            last = t == steps - 1
            rows.append({
                "line": line,
                "episode": e,
                "t": t,
                "features": feature_fn(e, t),
                "action": action_fn(e, t),
                "reward": reward_fn(e, t),
                "terminal": last,
                "labels": label_fn(e, t, last),
            })
            line += 1
    return rows


def make_dataset(n_episodes=3, steps=50, **kwargs):
    rows = make_rows(n_episodes, steps, **kwargs)
    feature_names = sorted(rows[0]["features"])
    label_names = sorted(rows[0]["labels"])
    return dataset_from_rows(rows, feature_names, label_names)


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            obj = {k: v for k, v in row.items() if k != "line"}
            fh.write(json.dumps(obj) + "\n")


@pytest.fixture
def tiny_dataset():
    return make_dataset(n_episodes=3, steps=50)
