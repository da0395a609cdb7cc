"""Experiment configuration: one JSON file covering every stage.

Unknown keys are rejected so that typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .imitator import ImitatorArch, ImitatorTrainConfig
from .losses import KitConfig, MapperLossWeights
from .mapper import MapperArch, MapperTrainConfig
from .schema import AttributeSchema, default_schema
from .stylizer import FinetuneConfig, StylizerArch, StylizerTrainConfig


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 20000
    n_eval: int = 500
    seed: int = 1
    eval_seed: int = 2
    magnitude: float = 1.0
    # share of zero-corruption selfies in the training corpus
    clean_fraction: float = 0.1


@dataclass(frozen=True)
class ImitatorSection:
    arch: ImitatorArch = field(default_factory=ImitatorArch)
    train: ImitatorTrainConfig = field(default_factory=ImitatorTrainConfig)


@dataclass(frozen=True)
class StylizerSection:
    arch: StylizerArch = field(default_factory=StylizerArch)
    train: StylizerTrainConfig = field(default_factory=StylizerTrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    finetune_enabled: bool = False
    # start from (and by default freeze) the imitator's generator as the decoder
    decoder_from_imitator: bool = True
    prior_sigma: float = 0.05
    n_exemplars: int = 150


@dataclass(frozen=True)
class MapperSection:
    arch: MapperArch = field(default_factory=MapperArch)
    train: MapperTrainConfig = field(default_factory=MapperTrainConfig)
    n_train: int = 8000
    n_val: int = 500


@dataclass(frozen=True)
class ConversionSection:
    init: str = "relaxed"
    passes: int = 1
    scorer: str = "imitator"


@dataclass(frozen=True)
class AblationSection:
    n_train: int = 2000
    epochs: int = 6
    seeds: tuple = (0, 1, 2)
    n_eval: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "default"
    schema: dict | None = None  # None -> built-in default schema
    catalog_seed: int = 0
    image_size: int = 64
    supersample: int = 2
    data: DataConfig = field(default_factory=DataConfig)
    kit: KitConfig = field(default_factory=KitConfig)
    imitator: ImitatorSection = field(default_factory=ImitatorSection)
    stylizer: StylizerSection = field(default_factory=StylizerSection)
    mapper: MapperSection = field(default_factory=MapperSection)
    conversion: ConversionSection = field(default_factory=ConversionSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    def __post_init__(self):
        if self.imitator.arch.size != self.image_size or self.stylizer.arch.size != self.image_size:
            raise ConfigError("imitator and stylizer sizes must equal image_size")
        if (self.stylizer.arch.n_styles, self.stylizer.arch.style_dim) != (self.mapper.arch.n_styles,
                                                                           self.mapper.arch.style_dim):
            raise ConfigError("mapper latent shape must match the stylizer's")
        ia, sa = self.imitator.arch, self.stylizer.arch
        if self.stylizer.decoder_from_imitator and (ia.n_styles, ia.style_dim, ia.width) != (sa.n_styles, sa.style_dim,
                                                                                             sa.width):
            raise ConfigError("decoder_from_imitator needs matching imitator and stylizer generator shapes")

    def build_schema(self) -> AttributeSchema:
        return AttributeSchema.from_dict(self.schema) if self.schema is not None else default_schema()

    def to_dict(self) -> dict:
        return _to_plain(self)

    def section_hash(self, *keys: str) -> str:
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _from_plain(cls, d, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(d)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(x) for x in obj]
    return obj


def _from_plain(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _from_plain(tp, value, f"{where}.{name}")
        elif tp is tuple or typing.get_origin(tp) is tuple:
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def acceptance_preset() -> ExperimentConfig:
    """32 px, reduced budgets: the whole acceptance suite trains in well under an hour on one core."""
    size = 32
    return ExperimentConfig(
        name="acceptance",
        image_size=size,
        data=DataConfig(n_train=8500, n_eval=500),
        kit=KitConfig(n_vectors=3000, segnet_epochs=8),
        imitator=ImitatorSection(ImitatorArch(size=size),
                                 ImitatorTrainConfig(epochs=10, pretrain_epochs=3, lr=0.002, batch_size=16)),
        stylizer=StylizerSection(StylizerArch(size=size), StylizerTrainConfig(epochs=10, batch_size=16)),
        mapper=MapperSection(train=MapperTrainConfig(epochs=10, batch_size=32), n_train=8000, n_val=500),
        ablation=AblationSection(n_train=2000, epochs=6, seeds=(0, 1, 2), n_eval=200),
    )


def smoke_preset() -> ExperimentConfig:
    """Tiny budgets for plumbing tests; models are not expected to be accurate."""
    size = 32
    return ExperimentConfig(
        name="smoke",
        image_size=size,
        data=DataConfig(n_train=160, n_eval=60),
        kit=KitConfig(n_vectors=60, views_per_vector=1, embedder_epochs=1, segnet_epochs=1),
        imitator=ImitatorSection(ImitatorArch(size=size, width=0.5),
                                 ImitatorTrainConfig(epochs=1, pretrain_epochs=1, batch_size=32)),
        stylizer=StylizerSection(StylizerArch(size=size, width=0.5), StylizerTrainConfig(epochs=1, batch_size=32),
                                 FinetuneConfig(steps=2, batch_size=8), n_exemplars=60),
        mapper=MapperSection(train=MapperTrainConfig(epochs=2, batch_size=32), n_train=100, n_val=50),
        ablation=AblationSection(n_train=60, epochs=1, seeds=(0,), n_eval=50),
    )


PRESETS = {"default": ExperimentConfig, "acceptance": acceptance_preset, "smoke": smoke_preset}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def weights_from_terms(terms: typing.Iterable[str], base: MapperLossWeights = MapperLossWeights()) -> MapperLossWeights:
    """Mapper weights with every term not in ``terms`` switched off."""
    terms = set(terms)
    bad = terms - {"id", "lpips", "color"}
    if bad:
        raise ConfigError(f"unknown loss terms {sorted(bad)}")
    return MapperLossWeights(
        identity=base.identity if "id" in terms else 0.0,
        perceptual=base.perceptual if "lpips" in terms else 0.0,
        color=base.color if "color" in terms else 0.0,
    )
