"""Relaxed -> strict avatar vectors.

``search_convert`` tries every asset of one attribute at a time (all other
attributes held at their current values), scores each candidate image against
the imitator's rendering of the relaxed vector, and commits the best one
before moving to the next attribute. ``argmax_convert`` is the baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError
from .losses import LossKit, MapperLossWeights, mapper_loss, to_tensor
from .schema import RelaxedAvatarVector, StrictAvatarVector, flatten

INITS = ("relaxed", "argmax")
SCORERS = ("imitator", "engine")


def argmax_convert(relaxed: RelaxedAvatarVector) -> StrictAvatarVector:
    """Most probable asset per attribute (ties to the lowest index); continuous values clamped."""
    return StrictAvatarVector(relaxed.schema, np.clip(relaxed.unit, 0.0, 1.0), [int(np.argmax(p)) for p in relaxed.discrete])


@dataclass
class ConversionResult:
    strict: StrictAvatarVector
    chosen: list[int]
    # tables[pass][attribute] -> (N_a,) candidate losses
    tables: list[list[np.ndarray]]
    objective_before: float  # objective of the argmax vector
    objective_after: float
    pass_objectives: list[float] = field(default_factory=list)

    @property
    def final_tables(self) -> list[np.ndarray]:
        return self.tables[-1]

    def csv_rows(self, sample_id) -> list[tuple]:
        """(sample_id, pass, attribute, candidate, loss, chosen) rows."""
        names = self.strict.schema.discrete_names
        rows = []
        for p, tabs in enumerate(self.tables):
            for a, tab in enumerate(tabs):
                pick = int(np.argmin(tab))
                for j, val in enumerate(tab):
                    rows.append((sample_id, p, names[a], j, float(val), int(j == pick)))
        return rows


class _Scorer:
    """Scores candidate flat encodings against a fixed target image."""

    def __init__(self, imitator, kit: LossKit, target: torch.Tensor, weights: MapperLossWeights, engine=None):
        self.imitator, self.kit, self.weights, self.engine = imitator, kit, weights, engine
        self.target = target
        self.target_seg = kit.segment(target)

    def __call__(self, flats: np.ndarray) -> np.ndarray:
        # one candidate per forward pass: batched float32 kernels round differently from the
        # batch-of-one path used for the target, which would break exact self-matches and ties
        return np.array([self._one(f) for f in flats])

    def _one(self, flat: np.ndarray) -> float:
        dtype = self.target.dtype
        with torch.no_grad():
            if self.engine is None:
                img = self.imitator.forward(torch.tensor(flat, dtype=dtype)[None])
                seg = None
            else:
                out = self.engine.render(self.engine.schema.unflatten_strict(flat))
                img = to_tensor(out.image[None], dtype)
                seg = torch.from_numpy(out.segmentation[None].astype(np.int64))
            return float(mapper_loss(self.kit, self.target, img, self.target_seg, seg, self.weights).total[0])


def imitate_target(imitator, relaxed: RelaxedAvatarVector) -> torch.Tensor:
    model = imitator._require()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return imitator.forward(torch.tensor(flatten(relaxed).values, dtype=dtype)[None])


def search_convert(relaxed: RelaxedAvatarVector, imitator, kit: LossKit, *, init: str = "relaxed", passes: int = 1,
                   weights: MapperLossWeights = MapperLossWeights(), engine=None) -> ConversionResult:
    """Greedy per-attribute exhaustive search, in schema order, repeated ``passes`` times.

    ``init="argmax"`` starts from the argmax vector, which makes the objective
    nonincreasing over the search. Passing ``engine`` scores candidates with
    engine renders (exact segmentations) instead of the imitator; that needs a
    strict starting point, so it implies ``init="argmax"``.
    """
    if init not in INITS:
        raise ConfigError(f"init must be one of {INITS}, got {init!r}")
    if passes < 1:
        raise ConfigError("passes must be >= 1")
    schema = relaxed.schema
    target = imitate_target(imitator, relaxed)
    score = _Scorer(imitator, kit, target, weights, engine)
    start = argmax_convert(relaxed) if (init == "argmax" or engine is not None) else relaxed
    current = flatten(start).values.copy()
    current[: schema.n_continuous] = np.clip(current[: schema.n_continuous], 0.0, 1.0)
    chosen = [-1] * len(schema.discrete)
    tables: list[list[np.ndarray]] = []
    pass_objectives: list[float] = []
    before = None
    for _ in range(passes):
        tabs = []
        for a, (n, sl) in enumerate(zip(schema.cardinalities, schema.discrete_slices)):
            cands = np.repeat(current[None], n, axis=0)
            cands[:, sl] = np.eye(n)
            tab = score(cands)
            if before is None and (init == "argmax" or engine is not None):
                before = float(tab[int(np.argmax(current[sl]))])
            pick = int(np.argmin(tab))  # first minimum: ties go to the lowest index
            current[sl] = np.eye(n)[pick]
            chosen[a] = pick
            tabs.append(tab)
        tables.append(tabs)
        pass_objectives.append(float(tabs[-1][chosen[-1]]))
    if before is None:
        # relaxed start: report the argmax baseline's objective
        before = float(score(flatten(argmax_convert(relaxed)).values[None])[0])
    strict = StrictAvatarVector(schema, current[: schema.n_continuous], chosen)
    return ConversionResult(strict, chosen, tables, before, pass_objectives[-1], pass_objectives)


def conversion_objective(strict: StrictAvatarVector, target_relaxed: RelaxedAvatarVector, imitator, kit: LossKit,
                         weights: MapperLossWeights = MapperLossWeights()) -> float:
    """mapper_loss between the imitator image of ``target_relaxed`` and that of ``strict``."""
    target = imitate_target(imitator, target_relaxed)
    return float(_Scorer(imitator, kit, target, weights)(flatten(strict).values[None])[0])
