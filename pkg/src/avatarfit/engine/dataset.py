"""Synthetic corpora of (strict vector, clean render, pseudo-selfie) triples.

Sample ``i`` is drawn from ``default_rng([seed, i])``, so a dataset of size n
is a prefix of any larger one with the same seed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import io
from ..schema import AttributeSchema, StrictAvatarVector, flatten_batch
from .render import Engine
from .selfie import SelfieCorruption, synth_selfie


@dataclass
class Dataset:
    schema: AttributeSchema
    flat: np.ndarray  # (n, flat_size) strict encodings
    indices: np.ndarray  # (n, n_discrete)
    renders: np.ndarray  # (n, H, W, 3) uint8
    segs: np.ndarray  # (n, H, W) uint8
    selfies: np.ndarray  # (n, H, W, 3) uint8
    selfie_segs: np.ndarray  # (n, H, W) uint8
    corruptions: list

    def __len__(self) -> int:
        return len(self.flat)

    @property
    def size(self) -> int:
        return self.renders.shape[1]

    def vector(self, i: int) -> StrictAvatarVector:
        return self.schema.unflatten_strict(self.flat[i])

    def vectors(self) -> list[StrictAvatarVector]:
        return [self.vector(i) for i in range(len(self))]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.schema, self.flat[idx], self.indices[idx], self.renders[idx], self.segs[idx],
                       self.selfies[idx], self.selfie_segs[idx], [self.corruptions[i] for i in idx])

    def split(self, n_holdout: int) -> tuple["Dataset", "Dataset"]:
        n = len(self)
        return self.subset(np.arange(n - n_holdout)), self.subset(np.arange(n - n_holdout, n))

    def hash(self) -> str:
        h = hashlib.sha256()
        for a in (self.flat, self.renders, self.segs, self.selfies, self.selfie_segs):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(json.dumps([c.to_record() for c in self.corruptions]).encode())
        return h.hexdigest()

    # -- persistence ------------------------------------------------------------
    def save(self, root) -> None:
        """Layout: images/, selfies/, seg/, selfie_seg/ (8-bit PNG), manifest.jsonl, schema.json."""
        root = Path(root)
        for i in range(len(self)):
            name = f"{i:06d}.png"
            io.write_png(root / "images" / name, self.renders[i])
            io.write_png(root / "selfies" / name, self.selfies[i])
            io.write_png(root / "seg" / name, self.segs[i])
            io.write_png(root / "selfie_seg" / name, self.selfie_segs[i])
        recs = [
            {"id": i, "image": f"{i:06d}.png", "vector": self.vector(i).to_record(),
             "corruption": self.corruptions[i].to_record()}
            for i in range(len(self))
        ]
        io.write_jsonl(root / "manifest.jsonl", recs)
        self.schema.save(root / "schema.json")

    def save_npz(self, path) -> None:
        """Single-file compressed form used by the artifact cache."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            path, flat=self.flat, indices=self.indices, renders=self.renders, segs=self.segs, selfies=self.selfies,
            selfie_segs=self.selfie_segs, schema=json.dumps(self.schema.to_dict()),
            corruptions=json.dumps([c.to_record() for c in self.corruptions]),
        )

    @classmethod
    def load_npz(cls, path) -> "Dataset":
        with np.load(Path(path)) as z:
            schema = AttributeSchema.from_dict(json.loads(str(z["schema"])))
            corrs = [SelfieCorruption.from_record(r) for r in json.loads(str(z["corruptions"]))]
            return cls(schema, z["flat"], z["indices"], z["renders"], z["segs"], z["selfies"], z["selfie_segs"], corrs)

    @classmethod
    def load(cls, root) -> "Dataset":
        root = Path(root)
        schema = AttributeSchema.load(root / "schema.json")
        recs = io.read_jsonl(root / "manifest.jsonl")
        vecs = [StrictAvatarVector.from_record(schema, r["vector"]) for r in recs]
        read = lambda sub: np.stack([io.read_png(root / sub / r["image"]) for r in recs])  # noqa: E731
        return cls(
            schema,
            flatten_batch(vecs),
            np.array([v.discrete for v in vecs], dtype=np.int64),
            read("images"),
            read("seg"),
            read("selfies"),
            read("selfie_seg"),
            [SelfieCorruption.from_record(r["corruption"]) for r in recs],
        )


def generate_dataset(engine: Engine, n: int, seed: int, magnitude: float = 1.0,
                     clean_fraction: float = 0.0) -> Dataset:
    """Random strict vectors with clean renders and corrupted selfies.

    A ``clean_fraction`` of samples get a zero-magnitude corruption (clean
    background, no noise) so that downstream models also see the neutral case.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    schema = engine.schema
    vecs, corrs = [], []
    size = engine.size
    renders = np.empty((n, size, size, 3), np.uint8)
    segs = np.empty((n, size, size), np.uint8)
    selfies = np.empty_like(renders)
    selfie_segs = np.empty_like(segs)
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        v = schema.random_strict(rng)
        c = SelfieCorruption.sample(rng, magnitude)
        if rng.random() < clean_fraction:
            c = SelfieCorruption()
        out = engine.render(v)
        renders[i], segs[i] = io.to_uint8(out.image), out.segmentation
        img, seg = synth_selfie(engine, v, c)
        selfies[i], selfie_segs[i] = io.to_uint8(img), seg
        vecs.append(v)
        corrs.append(c)
    return Dataset(schema, flatten_batch(vecs), np.array([v.discrete for v in vecs], dtype=np.int64),
                   renders, segs, selfies, selfie_segs, corrs)


def clean_selfies(engine: Engine, vectors) -> np.ndarray:
    """Zero-corruption selfies (identical to clean renders) as uint8."""
    return np.stack([io.to_uint8(engine.render(v).image) for v in vectors])
