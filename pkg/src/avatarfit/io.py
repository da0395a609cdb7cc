"""File formats: PNG images, JSON-lines manifests, CSV logs and checkpoints."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, array: np.ndarray) -> None:
    path = Path(path)
    if array.dtype != np.uint8:
        array = to_uint8(array)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(array).save(path)
    except OSError as e:
        raise OSError(f"failed to write image {path}: {e}") from e


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im).copy()
    except OSError as e:
        raise OSError(f"failed to read image {path}: {e}") from e


def write_jsonl(path, records) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
    except OSError as e:
        raise OSError(f"failed to write manifest {path}: {e}") from e


def read_jsonl(path) -> list[dict]:
    try:
        with open(path) as f:
            return [json.loads(line) for line in f if line.strip()]
    except OSError as e:
        raise OSError(f"failed to read manifest {path}: {e}") from e


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def save_checkpoint(path, kind: str, schema_hash: str, config: dict, state: dict, extra: dict | None = None) -> None:
    import torch

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "kind": kind,
            "schema_hash": schema_hash,
            "config": config,
            "state": state,
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path, kind: str, schema_hash: str | None = None) -> dict:
    import torch

    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {blob.get('format_version')}")
    if blob.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {blob.get('kind')}")
    if schema_hash is not None and blob.get("schema_hash") != schema_hash:
        raise CheckpointError(f"{path}: schema hash mismatch ({blob.get('schema_hash')} != {schema_hash})")
    return blob
