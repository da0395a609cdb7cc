"""Ground-truth recovery metrics (available only because the engine is synthetic)."""
from __future__ import annotations

import numpy as np

from ..schema import StrictAvatarVector


def recovery_metrics(predicted: list[StrictAvatarVector], truth: list[StrictAvatarVector]) -> dict:
    """Per-attribute exact-match accuracy, per-attribute continuous MAE (unit scale), chance levels."""
    if len(predicted) != len(truth):
        raise ValueError("predicted and ground-truth lists differ in length")
    if not predicted:
        raise ValueError("no samples")
    schema = truth[0].schema
    pi = np.array([p.discrete for p in predicted])
    ti = np.array([t.discrete for t in truth])
    pu = np.array([p.unit for p in predicted])
    tu = np.array([t.unit for t in truth])
    acc = (pi == ti).mean(axis=0)
    mae = np.abs(pu - tu).mean(axis=0)
    return {
        "n": len(predicted),
        "accuracy": dict(zip(schema.discrete_names, map(float, acc))),
        "chance": {a.name: 1.0 / a.cardinality for a in schema.discrete},
        "mean_accuracy": float(acc.mean()),
        "mae": dict(zip(schema.continuous_names, map(float, mae))),
        "mean_mae": float(mae.mean()),
    }
