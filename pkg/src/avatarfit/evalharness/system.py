"""Stage orchestration: build (or load from cache) every trained component of an experiment.

Each artifact is keyed by a hash of the configuration sections it depends on,
so changing one stage's settings retrains only that stage and its dependents.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import io
from ..config import ExperimentConfig
from ..engine import Dataset, Engine, build_catalog, generate_dataset
from ..errors import NotTrainedError
from ..imitator import Imitator, pretrain_generator, train_imitator
from ..losses import LossKit, build_loss_kit
from ..mapper import Mapper, MapperTrainConfig, train_mapper
from ..stylizer import Stylizer, adversarial_finetune, exemplar_set, train_stylizer
from ..training import CurveLog

log = logging.getLogger(__name__)


def default_cache_dir() -> Path:
    return Path(os.environ.get("AVATARFIT_CACHE", Path.home() / ".cache" / "avatarfit"))


def _key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:16]


class ArtifactCache:
    def __init__(self, root=None, enabled: bool = True):
        self.root = Path(root) if root is not None else default_cache_dir()
        self.enabled = enabled

    def path(self, kind: str, key: str, suffix: str) -> Path:
        return self.root / kind / f"{key}{suffix}"

    def get_or_build(self, kind: str, key: str, suffix: str, build, save, load):
        p = self.path(kind, key, suffix)
        if self.enabled and p.exists():
            log.info("cache hit: %s", p)
            return load(p)
        obj = build()
        if self.enabled:
            save(obj, p)
        return obj


def _write_curve(path: Path, rows: list) -> None:
    c = CurveLog()
    c.rows = rows
    c.write_csv(path)


@dataclass
class System:
    config: ExperimentConfig
    engine: Engine
    train: Dataset
    eval: Dataset
    kit: LossKit | None = None
    imitator: Imitator | None = None
    stylizer: Stylizer | None = None
    mapper: Mapper | None = None
    keys: dict | None = None

    @property
    def schema(self):
        return self.engine.schema

    def require(self, *stages: str) -> None:
        for s in stages:
            if getattr(self, s) is None:
                raise NotTrainedError(f"pipeline stage '{s}' is not trained")

    def fit_split(self) -> tuple[Dataset, Dataset]:
        """Training corpus minus the validation tail used for stage-level metrics."""
        return self.train.split(self.config.mapper.n_val)


class Builder:
    """Trains or loads each stage, writing curves into ``workdir`` when given."""

    def __init__(self, config: ExperimentConfig, cache: ArtifactCache | None = None, workdir=None):
        self.cfg = config
        self.cache = cache or ArtifactCache()
        self.workdir = Path(workdir) if workdir is not None else None
        self.keys: dict[str, str] = {}

    def _curve(self, name: str, rows) -> None:
        if self.workdir is not None and rows:
            _write_curve(self.workdir / "curves" / f"{name}.csv", rows)

    # -- stages ---------------------------------------------------------
    def engine(self) -> Engine:
        schema = self.cfg.build_schema()
        return Engine(schema, build_catalog(schema, self.cfg.catalog_seed), size=self.cfg.image_size,
                      supersample=self.cfg.supersample)

    def data(self, engine: Engine) -> tuple[Dataset, Dataset]:
        c = self.cfg
        base = (c.to_dict()["schema"], c.catalog_seed, c.image_size, c.supersample, engine.schema.hash())
        d = c.data
        k_train = _key("train", base, d.n_train, d.seed, d.magnitude, d.clean_fraction)
        k_eval = _key("eval", base, d.n_eval, d.eval_seed, d.magnitude)
        self.keys.update(train=k_train, eval=k_eval)
        train = self.cache.get_or_build(
            "data", k_train, ".npz",
            lambda: generate_dataset(engine, d.n_train, d.seed, d.magnitude, d.clean_fraction),
            lambda ds, p: ds.save_npz(p), Dataset.load_npz)
        ev = self.cache.get_or_build(
            "data", k_eval, ".npz", lambda: generate_dataset(engine, d.n_eval, d.eval_seed, d.magnitude),
            lambda ds, p: ds.save_npz(p), Dataset.load_npz)
        return train, ev

    def kit(self, engine: Engine) -> LossKit:
        k = _key("kit", self.keys["train"], self.cfg.to_dict()["kit"], self.cfg.image_size, engine.schema.hash())
        self.keys["kit"] = k

        def build():
            kit, curves = build_loss_kit(engine, self.cfg.kit)
            for name, rows in curves.items():
                self._curve(f"kit_{name}", [{"epoch": i, "loss": v} for i, v in enumerate(rows)])
            return kit

        return self.cache.get_or_build(
            "kit", k, ".pt", build,
            lambda kit, p: io.save_checkpoint(p, "loss_kit", engine.schema.hash(), self.cfg.to_dict()["kit"], kit.state()),
            lambda p: LossKit.from_state(io.load_checkpoint(p, "loss_kit")["state"]))

    def imitator(self, system: System, overrides: dict | None = None) -> Imitator:
        sec = self.cfg.imitator
        train_cfg = replace(sec.train, **(overrides or {}))
        k = _key("imitator", self.keys["train"], self.keys["kit"], self.cfg.to_dict()["imitator"], overrides or {})
        if not overrides:
            self.keys["imitator"] = k
        fit, _ = system.fit_split()

        def build():
            pre = pretrain_generator(fit.renders, sec.arch, train_cfg, system.kit) if train_cfg.two_step else None
            res = train_imitator(fit.flat, fit.renders, system.kit, sec.arch, train_cfg, pre)
            tag = "imitator" if not overrides else "imitator_" + _key(overrides)
            self._curve(tag, res.curve)
            if pre is not None:
                self._curve(tag + "_pretrain", pre.curve)
            return Imitator(system.schema, res.model, sec.arch)

        return self.cache.get_or_build("imitator", k, ".pt", build, lambda m, p: m.save(p),
                                       lambda p: Imitator.load(p, system.schema))

    def stylizer(self, system: System) -> Stylizer:
        sec = self.cfg.stylizer
        init = None
        if sec.decoder_from_imitator:
            system.require("imitator")
            init = system.imitator.model.generator
        k = _key("stylizer", self.keys["train"], self.keys["kit"], self.cfg.to_dict()["stylizer"],
                 self.keys["imitator"] if init is not None else None)
        self.keys["stylizer"] = k
        fit, _ = system.fit_split()

        def build():
            res = train_stylizer(fit.selfies, fit.renders, fit.segs, system.kit, sec.arch, sec.train, system.schema,
                                 sec.prior_sigma, init_decoder=init)
            self._curve("stylizer", res.curve)
            sty = res.stylizer
            if sec.finetune_enabled:
                ex = exemplar_set(system.engine, sec.n_exemplars, seed=self.cfg.data.seed)
                ft = adversarial_finetune(sty, ex, system.kit, sec.finetune)
                self._curve("stylizer_finetune", ft.curve)
                sty = ft.stylizer
            return sty

        return self.cache.get_or_build("stylizer", k, ".pt", build, lambda m, p: m.save(p),
                                       lambda p: Stylizer.load(p, system.schema))

    def mapper_corpus(self, system: System, n_train: int | None = None, raw_targets: bool = False):
        """(train latents, train targets, val latents, val targets) for mapper training.

        Targets are the stylizer's decoded images, or the raw selfies when
        ``raw_targets`` (the no-stylization ablation).
        """
        system.require("stylizer")
        fit, val = system.fit_split()
        n = min(n_train or self.cfg.mapper.n_train, len(fit))
        w_tr, y_tr = system.stylizer.stylize_many(fit.selfies[:n])
        w_va, y_va = system.stylizer.stylize_many(val.selfies)
        if raw_targets:
            y_tr, y_va = fit.selfies[:n], val.selfies
        return w_tr, y_tr, w_va, y_va

    def mapper(self, system: System, train_cfg: MapperTrainConfig | None = None, n_train: int | None = None,
               raw_targets: bool = False, tag: str = "mapper") -> tuple[Mapper, list, float]:
        system.require("kit", "imitator", "stylizer")
        train_cfg = train_cfg or self.cfg.mapper.train
        n = n_train or self.cfg.mapper.n_train
        k = _key("mapper", self.keys.get("imitator"), self.keys["stylizer"], self.cfg.to_dict()["mapper"]["arch"],
                 repr(train_cfg), n, raw_targets, self.cfg.mapper.n_val)

        def build():
            w_tr, y_tr, w_va, y_va = self.mapper_corpus(system, n, raw_targets)
            res = train_mapper(w_tr, y_tr, system.imitator, system.kit, system.schema, train_cfg, self.cfg.mapper.arch,
                               val=(w_va, y_va))
            return res.mapper, res.curve, res.final_val_loss

        def save(obj, p):
            obj[0].save(p, {"curve": obj[1], "final_val_loss": obj[2]})

        def load(p):
            blob = io.load_checkpoint(p, "mapper")
            return Mapper.load(p, system.schema), blob["extra"]["curve"], blob["extra"]["final_val_loss"]

        out = self.cache.get_or_build("mapper", k, ".pt", build, save, load)
        self._curve(tag, out[1])
        return out

    # -- everything ---------------------------------------------------------
    def build(self, stages=("kit", "imitator", "stylizer", "mapper")) -> System:
        engine = self.engine()
        train, ev = self.data(engine)
        system = System(self.cfg, engine, train, ev, keys=self.keys)
        if "kit" in stages:
            system.kit = self.kit(engine)
        # the stylizer's decoder may start from the imitator's generator
        if "imitator" in stages or ("stylizer" in stages and self.cfg.stylizer.decoder_from_imitator):
            system.imitator = self.imitator(system)
        if "stylizer" in stages:
            system.stylizer = self.stylizer(system)
        if "mapper" in stages:
            system.mapper = self.mapper(system)[0]
        return system


def build_system(config: ExperimentConfig, cache_dir=None, workdir=None, stages=("kit", "imitator", "stylizer", "mapper"),
                 use_cache: bool = True) -> System:
    return Builder(config, ArtifactCache(cache_dir, use_cache), workdir).build(stages)


def as_float_images(images: np.ndarray) -> np.ndarray:
    return images.astype(np.float64) / 255.0 if images.dtype == np.uint8 else images
