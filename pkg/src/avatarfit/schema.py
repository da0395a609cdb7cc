"""Avatar parameter space: attribute schema and vector representations.

Continuous attributes are stored internally in unit-normalized form
``u = (x - low) / (high - low)`` so that the flat encoding round-trip is
exact; the physical values are exposed through ``.continuous``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1
SIMPLEX_TOL = 1e-6
# Sums closer to 1 than this are left alone, which keeps renormalization idempotent.
_RENORM_EPS = 1e-12


class SchemaError(ValueError):
    """A vector or encoding does not conform to its schema."""


@dataclass(frozen=True)
class ContinuousAttr:
    name: str
    low: float
    high: float


@dataclass(frozen=True)
class DiscreteAttr:
    name: str
    cardinality: int


class AttributeSchema:
    """Ordered description of every continuous and discrete avatar attribute."""

    def __init__(self, continuous: Iterable[ContinuousAttr], discrete: Iterable[DiscreteAttr]):
        self.continuous = tuple(continuous)
        self.discrete = tuple(discrete)
        names = [a.name for a in self.continuous] + [a.name for a in self.discrete]
        if len(set(names)) != len(names):
            raise SchemaError(f"attribute names must be unique: {names}")
        for a in self.continuous:
            if not a.high > a.low:
                raise SchemaError(f"{a.name}: empty range [{a.low}, {a.high}]")
        for a in self.discrete:
            if a.cardinality < 2:
                raise SchemaError(f"{a.name}: cardinality must be >= 2, got {a.cardinality}")

        self.n_continuous = len(self.continuous)
        self.cardinalities = tuple(a.cardinality for a in self.discrete)
        offsets = np.concatenate([[0], np.cumsum(self.cardinalities)]).astype(int)
        self.discrete_slices = tuple(
            slice(self.n_continuous + int(offsets[i]), self.n_continuous + int(offsets[i + 1]))
            for i in range(len(self.discrete))
        )
        self.flat_size = self.n_continuous + int(offsets[-1])
        self._low = np.array([a.low for a in self.continuous], dtype=np.float64)
        self._span = np.array([a.high - a.low for a in self.continuous], dtype=np.float64)

    # -- lookup -----------------------------------------------------------
    @property
    def continuous_names(self) -> list[str]:
        return [a.name for a in self.continuous]

    @property
    def discrete_names(self) -> list[str]:
        return [a.name for a in self.discrete]

    def discrete_index(self, name: str) -> int:
        return self.discrete_names.index(name)

    def continuous_index(self, name: str) -> int:
        return self.continuous_names.index(name)

    def to_unit(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self._low) / self._span

    def from_unit(self, unit) -> np.ndarray:
        return self._low + np.asarray(unit, dtype=np.float64) * self._span

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "continuous": [{"name": a.name, "min": a.low, "max": a.high} for a in self.continuous],
            "discrete": [{"name": a.name, "cardinality": a.cardinality} for a in self.discrete],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeSchema":
        version = d.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema version {version}")
        return cls(
            [ContinuousAttr(a["name"], float(a["min"]), float(a["max"])) for a in d["continuous"]],
            [DiscreteAttr(a["name"], int(a["cardinality"])) for a in d["discrete"]],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "AttributeSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def __eq__(self, other) -> bool:
        return isinstance(other, AttributeSchema) and self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(self.hash())

    def __repr__(self) -> str:
        return f"AttributeSchema({self.n_continuous} continuous, {self.cardinalities})"

    # -- vector operations --------------------------------------------------
    def random_strict(self, seed) -> "StrictAvatarVector":
        """Uniformly random strict vector; ``seed`` may be an int or a numpy Generator."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        unit = rng.random(self.n_continuous)
        idx = tuple(int(rng.integers(n)) for n in self.cardinalities)
        return StrictAvatarVector(self, unit, idx)

    def strict_from_values(self, continuous: Sequence[float], discrete: Sequence[int]) -> "StrictAvatarVector":
        return StrictAvatarVector(self, self.to_unit(continuous), tuple(discrete))

    def unflatten(self, values) -> "RelaxedAvatarVector":
        values = np.asarray(getattr(values, "values", values), dtype=np.float64)
        if values.shape != (self.flat_size,):
            raise SchemaError(f"flat encoding must have shape ({self.flat_size},), got {values.shape}")
        return RelaxedAvatarVector(
            self,
            values[: self.n_continuous].copy(),
            tuple(values[s].copy() for s in self.discrete_slices),
        )

    def unflatten_strict(self, values) -> "StrictAvatarVector":
        relaxed = self.unflatten(values)
        for p in relaxed.discrete:
            if not np.all((p == 0.0) | (p == 1.0)):
                raise SchemaError("encoding is not one-hot in every discrete block")
        return relaxed.argmax()


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class StrictAvatarVector:
    """Avatar vector with exactly one selected asset per discrete attribute."""

    __slots__ = ("schema", "unit", "discrete")

    def __init__(self, schema: AttributeSchema, unit, discrete: Sequence[int]):
        unit = _readonly(unit)
        if unit.shape != (schema.n_continuous,):
            raise SchemaError(f"expected {schema.n_continuous} continuous values, got {unit.shape}")
        if not np.all(np.isfinite(unit)) or np.any(unit < 0.0) or np.any(unit > 1.0):
            raise SchemaError("continuous value outside its schema range")
        discrete = tuple(int(i) for i in discrete)
        if len(discrete) != len(schema.discrete):
            raise SchemaError(f"expected {len(schema.discrete)} discrete indices, got {len(discrete)}")
        for i, (a, n) in enumerate(zip(schema.discrete, schema.cardinalities)):
            if not 0 <= discrete[i] < n:
                raise SchemaError(f"{a.name}: index {discrete[i]} not in [0, {n})")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "unit", unit)
        object.__setattr__(self, "discrete", discrete)

    def __setattr__(self, key, value):
        raise AttributeError("StrictAvatarVector is immutable")

    @property
    def continuous(self) -> np.ndarray:
        return self.schema.from_unit(self.unit)

    def __getitem__(self, name: str):
        s = self.schema
        if name in s.discrete_names:
            return self.discrete[s.discrete_index(name)]
        return float(self.continuous[s.continuous_index(name)])

    def replace(self, **changes) -> "StrictAvatarVector":
        """Copy with some attributes changed; continuous values in physical units."""
        s = self.schema
        values = self.continuous.copy()
        idx = list(self.discrete)
        for name, v in changes.items():
            if name in s.discrete_names:
                idx[s.discrete_index(name)] = v
            elif name in s.continuous_names:
                values[s.continuous_index(name)] = v
            else:
                raise SchemaError(f"unknown attribute {name!r}")
        unit = s.to_unit(values)
        # Unchanged slots keep their stored unit value bit-for-bit.
        for i, name in enumerate(s.continuous_names):
            if name not in changes:
                unit[i] = self.unit[i]
        return StrictAvatarVector(s, unit, idx)

    def relax(self) -> "RelaxedAvatarVector":
        return relax(self)

    def flatten(self) -> "FlatEncoding":
        return flatten(self)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, StrictAvatarVector)
            and self.schema == other.schema
            and np.array_equal(self.unit, other.unit)
            and self.discrete == other.discrete
        )

    def __hash__(self) -> int:
        return hash((self.unit.tobytes(), self.discrete))

    def __repr__(self) -> str:
        return f"StrictAvatarVector(unit={np.round(self.unit, 3).tolist()}, discrete={list(self.discrete)})"

    def to_record(self) -> dict:
        s = self.schema
        return {
            "continuous": {n: float(x) for n, x in zip(s.continuous_names, self.continuous)},
            "discrete": {n: int(i) for n, i in zip(s.discrete_names, self.discrete)},
            "flat": self.flatten().values.tolist(),
        }

    @classmethod
    def from_record(cls, schema: AttributeSchema, rec: dict) -> "StrictAvatarVector":
        if "flat" in rec:
            return schema.unflatten_strict(rec["flat"])
        return schema.strict_from_values(
            [rec["continuous"][n] for n in schema.continuous_names],
            [rec["discrete"][n] for n in schema.discrete_names],
        )


class RelaxedAvatarVector:
    """Avatar vector whose discrete attributes are probability vectors on the simplex."""

    __slots__ = ("schema", "unit", "discrete")

    def __init__(self, schema: AttributeSchema, unit, discrete: Sequence):
        unit = _readonly(unit)
        if unit.shape != (schema.n_continuous,):
            raise SchemaError(f"expected {schema.n_continuous} continuous values, got {unit.shape}")
        if not np.all(np.isfinite(unit)) or np.any(unit < 0.0) or np.any(unit > 1.0):
            raise SchemaError("continuous value outside its schema range")
        if len(discrete) != len(schema.discrete):
            raise SchemaError(f"expected {len(schema.discrete)} probability vectors, got {len(discrete)}")
        probs = []
        for a, p in zip(schema.discrete, discrete):
            p = np.array(p, dtype=np.float64)
            if p.shape != (a.cardinality,):
                raise SchemaError(f"{a.name}: expected {a.cardinality} probabilities, got {p.shape}")
            total = p.sum()
            if not np.all(np.isfinite(p)) or np.any(p < -SIMPLEX_TOL) or abs(total - 1.0) > SIMPLEX_TOL:
                raise SchemaError(f"{a.name}: not a probability vector (sum={total})")
            if np.any(p < 0.0) or abs(total - 1.0) > _RENORM_EPS:
                p = np.clip(p, 0.0, None)
                p = p / p.sum()
            probs.append(_readonly(p))
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "unit", unit)
        object.__setattr__(self, "discrete", tuple(probs))

    def __setattr__(self, key, value):
        raise AttributeError("RelaxedAvatarVector is immutable")

    @property
    def continuous(self) -> np.ndarray:
        return self.schema.from_unit(self.unit)

    def flatten(self) -> "FlatEncoding":
        return flatten(self)

    def argmax(self) -> "StrictAvatarVector":
        # np.argmax returns the first maximal entry, i.e. ties go to the lowest index.
        return StrictAvatarVector(self.schema, self.unit, [int(np.argmax(p)) for p in self.discrete])

    def with_discrete(self, attr: int, probs) -> "RelaxedAvatarVector":
        d = list(self.discrete)
        d[attr] = probs
        return RelaxedAvatarVector(self.schema, self.unit, d)

    def is_strict(self) -> bool:
        return all(np.count_nonzero(p) == 1 for p in self.discrete)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RelaxedAvatarVector)
            and self.schema == other.schema
            and np.array_equal(self.unit, other.unit)
            and all(np.array_equal(a, b) for a, b in zip(self.discrete, other.discrete))
        )

    def __repr__(self) -> str:
        return f"RelaxedAvatarVector(unit={np.round(self.unit, 3).tolist()}, argmax={list(self.argmax().discrete)})"

    def to_record(self) -> dict:
        s = self.schema
        return {
            "continuous": {n: float(x) for n, x in zip(s.continuous_names, self.continuous)},
            "discrete": {n: p.tolist() for n, p in zip(s.discrete_names, self.discrete)},
            "flat": self.flatten().values.tolist(),
        }

    @classmethod
    def from_record(cls, schema: AttributeSchema, rec: dict) -> "RelaxedAvatarVector":
        if "flat" in rec:
            return schema.unflatten(rec["flat"])
        disc = []
        for a in schema.discrete:
            p = rec["discrete"][a.name]
            if isinstance(p, int):
                p = np.eye(a.cardinality)[p]
            disc.append(p)
        return cls(schema, schema.to_unit([rec["continuous"][n] for n in schema.continuous_names]), disc)


@dataclass(frozen=True)
class FlatEncoding:
    """Continuous block (unit-normalized) followed by the discrete blocks in schema order."""

    schema: AttributeSchema
    values: np.ndarray

    def __post_init__(self):
        v = _readonly(self.values)
        if v.shape != (self.schema.flat_size,):
            raise SchemaError(f"flat encoding must have shape ({self.schema.flat_size},), got {v.shape}")
        object.__setattr__(self, "values", v)


def relax(v: StrictAvatarVector) -> RelaxedAvatarVector:
    if not isinstance(v, StrictAvatarVector):
        raise SchemaError(f"relax expects a StrictAvatarVector, got {type(v).__name__}")
    probs = [np.eye(n)[i] for n, i in zip(v.schema.cardinalities, v.discrete)]
    return RelaxedAvatarVector(v.schema, v.unit, probs)


def _as_relaxed(v) -> RelaxedAvatarVector:
    return relax(v) if isinstance(v, StrictAvatarVector) else v


def interpolate(v1, v2, alpha: float) -> RelaxedAvatarVector:
    """Convex combination ``(1 - alpha) * v1 + alpha * v2`` of two avatar vectors."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    v1, v2 = _as_relaxed(v1), _as_relaxed(v2)
    if v1.schema != v2.schema:
        raise SchemaError("cannot interpolate vectors from different schemas")
    if alpha == 0.0:
        return v1
    if alpha == 1.0:
        return v2
    unit = np.clip((1.0 - alpha) * v1.unit + alpha * v2.unit, 0.0, 1.0)
    disc = [(1.0 - alpha) * p + alpha * q for p, q in zip(v1.discrete, v2.discrete)]
    return RelaxedAvatarVector(v1.schema, unit, disc)


def flatten(v) -> FlatEncoding:
    v = _as_relaxed(v)
    return FlatEncoding(v.schema, np.concatenate([v.unit, *v.discrete]))


def unflatten(e: FlatEncoding) -> RelaxedAvatarVector:
    return e.schema.unflatten(e.values)


def flatten_batch(vectors: Sequence) -> np.ndarray:
    return np.stack([flatten(v).values for v in vectors])


def default_schema() -> AttributeSchema:
    return AttributeSchema(
        [
            ContinuousAttr("head_width", 0.80, 1.10),
            ContinuousAttr("eye_size", 0.75, 1.30),
            ContinuousAttr("eye_spacing", 0.80, 1.20),
            ContinuousAttr("eye_rotation", -0.30, 0.30),
            ContinuousAttr("mouth_width", 0.70, 1.30),
            ContinuousAttr("mouth_y", 0.0, 1.0),
            ContinuousAttr("nose_y", 0.0, 1.0),
            ContinuousAttr("face_roundness", 0.0, 1.0),
        ],
        [
            DiscreteAttr("hair_type", 12),
            DiscreteAttr("beard_type", 6),
            DiscreteAttr("brow_type", 5),
            DiscreteAttr("glasses_type", 4),
            DiscreteAttr("skin_tone", 6),
            DiscreteAttr("eye_color", 5),
            DiscreteAttr("hair_color", 8),
        ],
    )
