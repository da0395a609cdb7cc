"""End-to-end inference: selfie -> latent -> relaxed vector -> strict vector -> engine render."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import io
from ..conversion import ConversionResult, argmax_convert, search_convert
from ..losses import mapper_loss, to_tensor
from ..schema import RelaxedAvatarVector, StrictAvatarVector
from .frechet import MIN_IMAGES, frechet_distance
from .metrics import recovery_metrics

STAGES = ("selfie", "stylized", "imitated", "converted")


@dataclass
class PipelineEntry:
    sample_id: int
    selfie: np.ndarray
    stylized: np.ndarray
    latent: np.ndarray
    relaxed: RelaxedAvatarVector
    imitated: np.ndarray
    strict: StrictAvatarVector
    argmax: StrictAvatarVector
    converted: np.ndarray
    losses: dict
    conversion: ConversionResult
    truth: StrictAvatarVector | None = None

    def digest(self, h) -> None:
        for a in (self.selfie, self.stylized, self.latent, self.relaxed.flatten().values, self.imitated,
                  self.strict.flatten().values, self.converted):
            h.update(np.ascontiguousarray(a).tobytes())

    def record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "relaxed": self.relaxed.to_record(),
            "strict": self.strict.to_record(),
            "argmax": self.argmax.to_record(),
            "truth": None if self.truth is None else self.truth.to_record(),
            "losses": self.losses,
        }


def _float_images(images: np.ndarray) -> np.ndarray:
    return images.astype(np.float64) / 255.0 if images.dtype == np.uint8 else np.asarray(images, dtype=np.float64)


def run_pipeline_batch(system, selfies: np.ndarray, truths=None, sample_ids=None, *, init: str | None = None,
                       passes: int | None = None, use_stylizer: bool = True) -> list[PipelineEntry]:
    """Run every stage on a batch of selfies; conversion runs per sample.

    ``use_stylizer=False`` feeds the raw selfie as the normalized image (the
    latent still comes from the encoder), used by the no-stylization ablation.
    """
    system.require("kit", "stylizer", "mapper", "imitator")
    conv = system.config.conversion
    init = init or conv.init
    passes = passes or conv.passes
    engine = system.engine if conv.scorer == "engine" else None
    selfies_f = _float_images(selfies)
    latents, stylized = system.stylizer.stylize_many(selfies)
    if not use_stylizer:
        stylized = selfies_f
    relaxed = system.mapper.map_many(latents)
    imitated = system.imitator.imitate_many(relaxed)
    with torch.no_grad():
        terms = mapper_loss(system.kit, to_tensor(stylized), to_tensor(imitated))
    ids = list(range(len(selfies))) if sample_ids is None else list(sample_ids)
    entries = []
    for i, rv in enumerate(relaxed):
        res = search_convert(rv, system.imitator, system.kit, init=init, passes=passes, engine=engine)
        rendered = system.engine.render(res.strict).image
        losses = {k: float(v[i]) for k, v in terms.terms.items()}
        losses.update(mapper_total=float(terms.total[i]), objective_argmax=res.objective_before,
                      objective_search=res.objective_after)
        entries.append(PipelineEntry(ids[i], selfies_f[i], stylized[i], latents[i], rv, imitated[i], res.strict,
                                     argmax_convert(rv), rendered, losses, res,
                                     None if truths is None else truths[i]))
    return entries


def run_pipeline(system, selfie: np.ndarray, truth: StrictAvatarVector | None = None, sample_id: int = 0,
                 **kw) -> PipelineEntry:
    return run_pipeline_batch(system, selfie[None], None if truth is None else [truth], [sample_id], **kw)[0]


@dataclass
class PipelineReport:
    entries: list[PipelineEntry]
    split: dict = field(default_factory=dict)
    aggregate: dict = field(default_factory=dict)

    def hash(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            e.digest(h)
        return h.hexdigest()

    def to_json(self) -> dict:
        return {"split": self.split, "aggregate": self.aggregate, "hash": self.hash(),
                "samples": [e.record() for e in self.entries]}

    def save(self, root) -> None:
        """report.json, samples.csv, losses.csv (sample_id, term, value) and conversion.csv."""
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "report.json").write_text(json.dumps(self.to_json(), indent=1) + "\n")
        schema = self.entries[0].strict.schema
        header = ["sample_id"] + [f"pred_{n}" for n in schema.discrete_names] + \
                 [f"argmax_{n}" for n in schema.discrete_names] + [f"true_{n}" for n in schema.discrete_names]
        rows = []
        for e in self.entries:
            truth = list(e.truth.discrete) if e.truth is not None else [""] * len(schema.discrete)
            rows.append([e.sample_id, *e.strict.discrete, *e.argmax.discrete, *truth])
        io.write_csv(root / "samples.csv", header, rows)
        io.write_csv(root / "losses.csv", ["sample_id", "term", "value"],
                     [(e.sample_id, k, v) for e in self.entries for k, v in e.losses.items()])
        io.write_csv(root / "conversion.csv", ["sample_id", "pass", "attribute", "candidate", "loss", "chosen"],
                     [r for e in self.entries for r in e.conversion.csv_rows(e.sample_id)])


def summarize(entries: list[PipelineEntry], reference: np.ndarray | None, extractor) -> dict:
    """Recovery metrics for search and argmax conversion, plus stage-wise Fréchet distances to ``reference``."""
    out: dict = {}
    if all(e.truth is not None for e in entries):
        truths = [e.truth for e in entries]
        out["search"] = recovery_metrics([e.strict for e in entries], truths)
        out["argmax"] = recovery_metrics([e.argmax for e in entries], truths)
    out["objective_search_mean"] = float(np.mean([e.losses["objective_search"] for e in entries]))
    out["objective_argmax_mean"] = float(np.mean([e.losses["objective_argmax"] for e in entries]))
    out["mapper_loss_mean"] = float(np.mean([e.losses["mapper_total"] for e in entries]))
    if reference is not None and len(entries) >= MIN_IMAGES and len(reference) >= MIN_IMAGES:
        out["frechet"] = {s: frechet_distance(np.stack([getattr(e, s) for e in entries]), reference, extractor)
                          for s in STAGES}
    else:
        out["frechet"] = {"skipped": f"needs >= {MIN_IMAGES} images"}
    return out


def evaluate(system, *, corrupted: bool = False, n: int | None = None, **kw) -> PipelineReport:
    """Pipeline over the eval split; zero-corruption selfies (clean renders) unless ``corrupted``."""
    ev = system.eval
    n = min(n or len(ev), len(ev))
    selfies = ev.selfies[:n] if corrupted else ev.renders[:n]
    truths = [ev.vector(i) for i in range(n)]
    entries = run_pipeline_batch(system, selfies, truths, list(range(n)), **kw)
    reference = _float_images(ev.renders[:n])
    agg = summarize(entries, reference, system.kit.extractor)
    split = {"dataset": "eval", "seed": system.config.data.eval_seed, "ids": list(range(n)),
             "corrupted": corrupted}
    return PipelineReport(entries, split, agg)
