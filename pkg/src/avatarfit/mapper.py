"""Latent code -> relaxed avatar vector, trained only through the frozen imitator."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import io
from .errors import ConfigError, NotTrainedError
from .losses import LossKit, MapperLossWeights, mapper_loss, to_tensor
from .nets import freeze
from .schema import AttributeSchema, RelaxedAvatarVector
from .training import CurveLog, check_finite, minibatches, seeded_generator

log = logging.getLogger(__name__)

MODES = ("relaxed", "straight_through")


# -- relaxations -------------------------------------------------------------
def scaled_softmax(logits, beta: float = 1.0):
    """``exp(beta * x_k) / sum_i exp(beta * x_i)`` over the last axis, max-subtracted.

    Accepts numpy arrays or torch tensors and returns the same kind.
    """
    if not beta >= 1.0:
        raise ValueError(f"beta must be >= 1, got {beta}")
    if isinstance(logits, torch.Tensor):
        if not torch.isfinite(logits).all():
            raise ValueError("logits must be finite")
        z = beta * logits
        return torch.softmax(z - z.amax(dim=-1, keepdim=True).detach(), dim=-1)
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    z = beta * x
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def straight_through_quantize(probs: torch.Tensor) -> torch.Tensor:
    """One-hot of the argmax (ties to the lowest index) forward; identity gradient backward."""
    # torch.argmax returns the first maximal index
    hard = torch.nn.functional.one_hot(probs.argmax(dim=-1), probs.shape[-1]).to(probs.dtype)
    return probs + (hard - probs).detach()


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(frozen=True)
class BetaSchedule:
    start: float = 1.0
    step: float = 1.0

    def __post_init__(self):
        if self.start < 1.0 or self.step < 0:
            raise ConfigError("beta schedule must start at >= 1 and be nondecreasing")

    def at(self, epoch: int) -> float:
        return self.start + self.step * epoch


# -- model ---------------------------------------------------------------------
@dataclass(frozen=True)
class MapperArch:
    n_styles: int = 6
    style_dim: int = 128
    layer_hidden: int = 128
    layer_out: int = 64
    head_hidden: int = 256


class MapperModel(nn.Module):
    """Per-layer MLPs, concatenated, feeding a continuous head and a discrete-logit head."""

    def __init__(self, schema: AttributeSchema, arch: MapperArch):
        super().__init__()
        self.arch = arch
        self.cardinalities = schema.cardinalities
        self.layers = nn.ModuleList(
            nn.Sequential(nn.Linear(arch.style_dim, arch.layer_hidden), nn.SiLU(),
                          nn.Linear(arch.layer_hidden, arch.layer_out), nn.SiLU())
            for _ in range(arch.n_styles)
        )
        joint = arch.n_styles * arch.layer_out
        self.continuous_head = nn.Sequential(nn.Linear(joint, arch.head_hidden), nn.SiLU(),
                                             nn.Linear(arch.head_hidden, schema.n_continuous))
        self.discrete_head = nn.Sequential(nn.Linear(joint, arch.head_hidden), nn.SiLU(),
                                           nn.Linear(arch.head_hidden, sum(schema.cardinalities)))

    def forward(self, w: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """``(continuous in [0, 1] (B, C), [logits (B, N_a) per discrete attribute])``."""
        h = torch.cat([mlp(w[:, i]) for i, mlp in enumerate(self.layers)], dim=1)
        cont = torch.sigmoid(self.continuous_head(h))
        logits = list(torch.split(self.discrete_head(h), list(self.cardinalities), dim=1))
        return cont, logits

    def flat(self, w: torch.Tensor, beta: float, mode: str = "relaxed") -> torch.Tensor:
        """Flat encoding (continuous block then discrete blocks) fed to the imitator."""
        if mode not in MODES:
            raise ConfigError(f"mapper mode must be one of {MODES}, got {mode!r}")
        cont, logits = self(w)
        blocks = [scaled_softmax(z, beta) for z in logits]
        if mode == "straight_through":
            blocks = [straight_through_quantize(p) for p in blocks]
        return torch.cat([cont, *blocks], dim=1)


class Mapper:
    def __init__(self, schema: AttributeSchema, model: MapperModel | None = None, beta: float = 1.0,
                 mode: str = "relaxed"):
        self.schema = schema
        self.model = freeze(model) if model is not None else None
        self.beta = float(beta)
        self.mode = mode

    def _require(self) -> MapperModel:
        if self.model is None:
            raise NotTrainedError("mapper: model is not trained; run train-mapper or load a checkpoint")
        return self.model

    def _check(self, w: np.ndarray) -> None:
        a = self._require().arch
        if w.shape[-2:] != (a.n_styles, a.style_dim):
            raise ValueError(f"latent must be shaped (..., {a.n_styles}, {a.style_dim}), got {w.shape}")

    def flat_many(self, latents: np.ndarray, beta: float | None = None) -> np.ndarray:
        """Relaxed flat encodings (B, flat_size) at the inference beta."""
        model = self._require()
        self._check(latents)
        b = self.beta if beta is None else beta
        with torch.no_grad():
            w = torch.from_numpy(np.asarray(latents, dtype=np.float32))
            cont, logits = model(w)
            # probabilities in float64 so they meet the simplex tolerance exactly
            probs = [scaled_softmax(z.double().numpy(), b) for z in logits]
        return np.concatenate([cont.double().numpy().clip(0.0, 1.0), *probs], axis=1)

    def map_latent(self, w: np.ndarray, beta: float | None = None) -> RelaxedAvatarVector:
        return self.map_many(w[None], beta)[0]

    def map_many(self, latents: np.ndarray, beta: float | None = None) -> list[RelaxedAvatarVector]:
        return [self.schema.unflatten(f) for f in self.flat_many(latents, beta)]

    def save(self, path, extra: dict | None = None) -> None:
        model = self._require()
        io.save_checkpoint(path, "mapper", self.schema.hash(),
                           {"arch": asdict(model.arch), "beta": self.beta, "mode": self.mode,
                            "schema": self.schema.to_dict()}, model.state_dict(), extra)

    @classmethod
    def load(cls, path, schema: AttributeSchema | None = None) -> "Mapper":
        blob = io.load_checkpoint(path, "mapper", schema.hash() if schema is not None else None)
        cfg = blob["config"]
        schema = schema or AttributeSchema.from_dict(cfg["schema"])
        model = MapperModel(schema, MapperArch(**cfg["arch"]))
        model.load_state_dict(blob["state"])
        return cls(schema, model, cfg["beta"], cfg["mode"])


# -- training --------------------------------------------------------------------
@dataclass(frozen=True)
class MapperTrainConfig:
    mode: str = "relaxed"
    epochs: int = 20
    beta: BetaSchedule = field(default_factory=BetaSchedule)
    lr: float = 1e-3
    batch_size: int = 64
    weights: MapperLossWeights = field(default_factory=MapperLossWeights)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mapper mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    @property
    def final_beta(self) -> float:
        return self.beta.at(self.epochs - 1)


@dataclass
class MapperTrainResult:
    mapper: Mapper
    curve: list
    final_val_loss: float


def _require_frozen(imitator) -> None:
    model = imitator._require()
    if model.training or any(p.requires_grad for p in model.parameters()):
        raise ConfigError("train_mapper needs a frozen imitator (eval mode, no trainable parameters)")


def evaluate_mapper(model: MapperModel, latents: torch.Tensor, targets: torch.Tensor, target_segs: torch.Tensor,
                    imitator, kit: LossKit, beta: float, mode: str, weights: MapperLossWeights,
                    batch_size: int = 256) -> dict[str, float]:
    """Mean mapper_loss terms over a held-out set, using the training-mode forward."""
    sums: dict[str, float] = {}
    with torch.no_grad():
        for s in range(0, len(latents), batch_size):
            sl = slice(s, s + batch_size)
            img = imitator.forward(model.flat(latents[sl], beta, mode))
            out = mapper_loss(kit, targets[sl], img, target_segs[sl], None, weights)
            for k, v in {"total": out.total, **out.terms}.items():
                sums[k] = sums.get(k, 0.0) + float(v.sum())
    return {k: v / len(latents) for k, v in sums.items()}


def train_mapper(latents: np.ndarray, targets: np.ndarray, imitator, kit: LossKit, schema: AttributeSchema,
                 cfg: MapperTrainConfig, arch: MapperArch | None = None,
                 val: tuple[np.ndarray, np.ndarray] | None = None) -> MapperTrainResult:
    """Self-supervised fit: imitate(map(w)) should match the normalized target image of w.

    ``targets`` are the stylizer's decoded images for ``latents``. Ground-truth
    avatar vectors are never used. ``val`` is an optional (latents, targets)
    pair scored after every epoch.
    """
    _require_frozen(imitator)
    arch = arch or MapperArch(n_styles=latents.shape[1], style_dim=latents.shape[2])
    gen = seeded_generator(cfg.seed)
    model = MapperModel(schema, arch)
    model.train()
    w_all = torch.from_numpy(np.asarray(latents, dtype=np.float32))
    y_all = to_tensor(targets)
    seg_all = torch.cat([kit.segment(y_all[i:i + 256]) for i in range(0, len(y_all), 256)])
    if val is not None:
        w_val = torch.from_numpy(np.asarray(val[0], dtype=np.float32))
        y_val = to_tensor(val[1])
        seg_val = torch.cat([kit.segment(y_val[i:i + 256]) for i in range(0, len(y_val), 256)])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    curve = CurveLog()
    val_metrics: dict[str, float] = {}
    for epoch in range(cfg.epochs):
        beta = cfg.beta.at(epoch)
        model.train()
        for step, idx in enumerate(minibatches(len(w_all), cfg.batch_size, gen)):
            img = imitator.forward(model.flat(w_all[idx], beta, cfg.mode))
            out = mapper_loss(kit, y_all[idx], img, seg_all[idx], None, cfg.weights)
            loss = out.total.mean()
            check_finite(loss, f"train_mapper[{cfg.mode}]", epoch, step, {k: v.mean() for k, v in out.terms.items()})
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.add(len(idx), total=loss.detach(), **{k: v.detach().mean() for k, v in out.terms.items()})
        fixed = {"beta": beta}
        if val is not None:
            model.eval()
            val_metrics = evaluate_mapper(model, w_val, y_val, seg_val, imitator, kit, beta, cfg.mode, cfg.weights)
            fixed.update({f"val_{k}": v for k, v in val_metrics.items()})
        log.info("mapper[%s] epoch %d: %s", cfg.mode, epoch, curve.close_epoch(epoch, **fixed))
    mapper = Mapper(schema, model, cfg.final_beta, cfg.mode)
    return MapperTrainResult(mapper, curve.rows, val_metrics.get("total", float("nan")))
