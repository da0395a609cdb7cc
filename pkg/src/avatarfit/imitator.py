"""Differentiable neural stand-in for the avatar engine.

A bank of per-layer MLPs maps the flat avatar encoding to a stack of style
vectors; a style-modulated convolutional generator turns them into an image.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import io
from .errors import ConfigError, NotTrainedError
from .losses import ImitatorLossWeights, LossKit, imitator_loss, to_numpy, to_tensor
from .nets import ConvEncoder, Discriminator, StyleGenerator, freeze
from .schema import AttributeSchema, StrictAvatarVector, flatten, interpolate
from .training import CurveLog, check_finite, minibatches, seeded_generator, step_decay

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImitatorArch:
    size: int = 64
    n_styles: int = 6
    style_dim: int = 128
    width: float = 1.0
    mlp_hidden: int = 256


@dataclass(frozen=True)
class ImitatorTrainConfig:
    two_step: bool = True
    lr: float = 0.01
    decay: float = 0.5
    decay_every: int = 2
    epochs: int = 20
    pretrain_epochs: int = 6
    pretrain_lr: float = 0.002
    adversarial_pretrain: bool = False
    batch_size: int = 64
    weights: ImitatorLossWeights = field(default_factory=ImitatorLossWeights)
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0 or not self.pretrain_lr > 0:
            raise ConfigError("step sizes must be positive")
        if self.epochs < 1 or self.pretrain_epochs < 1:
            raise ConfigError("epochs must be >= 1")


class StyleMLPBank(nn.Module):
    """One small MLP per latent layer, all reading the same flat encoding."""

    def __init__(self, in_dim: int, n_styles: int, style_dim: int, hidden: int):
        super().__init__()
        self.mlps = nn.ModuleList(
            nn.Sequential(nn.Linear(in_dim, hidden), nn.SiLU(), nn.Linear(hidden, style_dim)) for _ in range(n_styles)
        )

    def forward(self, x):
        return torch.stack([m(x) for m in self.mlps], dim=1)


class ImitatorModel(nn.Module):
    def __init__(self, flat_size: int, arch: ImitatorArch):
        super().__init__()
        self.arch = arch
        self.encoder = StyleMLPBank(flat_size, arch.n_styles, arch.style_dim, arch.mlp_hidden)
        self.generator = StyleGenerator(arch.size, arch.n_styles, arch.style_dim, arch.width)

    def forward(self, flat: torch.Tensor) -> torch.Tensor:
        return self.generator(self.encoder(flat))


# -- unconditional pretraining -------------------------------------------------
@dataclass
class PretrainedGenerator:
    """Generator plus a Gaussian fit of its latent stacks, for unconditional sampling."""

    generator: StyleGenerator
    latent_mean: torch.Tensor  # (M*D,)
    latent_chol: torch.Tensor  # (M*D, M*D) lower Cholesky factor
    curve: list

    def sample_latents(self, n: int, seed: int) -> torch.Tensor:
        g = torch.Generator().manual_seed(seed)
        z = torch.randn(n, self.latent_mean.numel(), generator=g, dtype=self.latent_mean.dtype)
        w = self.latent_mean + z @ self.latent_chol.T
        return w.view(n, self.generator.n_styles, self.generator.style_dim)

    @torch.no_grad()
    def sample(self, n: int, seed: int) -> np.ndarray:
        return to_numpy(self.generator(self.sample_latents(n, seed)))


def _latent_gaussian(latents: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    flat = latents.flatten(1).double()
    mean = flat.mean(0)
    cov = torch.cov(flat.T) + 1e-4 * torch.eye(flat.shape[1], dtype=flat.dtype)
    return mean.float(), torch.linalg.cholesky(cov).float()


def pretrain_generator(renders: np.ndarray, arch: ImitatorArch, cfg: ImitatorTrainConfig,
                       kit: LossKit | None = None) -> PretrainedGenerator:
    """Label-free generator training on engine renders.

    Default: an image autoencoder (conv encoder -> style generator) whose
    latent stacks are then fit with a Gaussian so the generator can be sampled
    unconditionally. With ``adversarial_pretrain`` a hinge discriminator on
    prior samples is added to the reconstruction objective.
    """
    from .losses import adversarial_losses, r1_penalty

    gen = seeded_generator(cfg.seed + 101)
    images = to_tensor(renders)
    if images.shape[-1] != arch.size:
        raise ConfigError(f"renders are {images.shape[-1]}px but the imitator is configured for {arch.size}px")
    enc = ConvEncoder(arch.size, arch.n_styles, arch.style_dim)
    generator = StyleGenerator(arch.size, arch.n_styles, arch.style_dim, arch.width)
    opt = torch.optim.Adam(list(enc.parameters()) + list(generator.parameters()), lr=cfg.pretrain_lr)
    disc = d_opt = None
    if cfg.adversarial_pretrain:
        disc = Discriminator(arch.size)
        d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.pretrain_lr, betas=(0.0, 0.99))
    curve = CurveLog()
    n = len(images)
    for epoch in range(cfg.pretrain_epochs):
        for step, idx in enumerate(minibatches(n, cfg.batch_size, gen)):
            x = images[idx]
            w = enc(x)
            rec = generator(w)
            l1 = (rec - x).abs().mean()
            loss = l1
            terms = {"l1": l1.detach()}
            if kit is not None:
                from .losses import perceptual_loss

                lp = perceptual_loss(kit.extractor, rec, x).mean()
                loss = loss + cfg.weights.perceptual * lp
                terms["lpips"] = lp.detach()
            if disc is not None:
                # critic update on (real renders, samples from the batch's latent moments)
                w_fake = (w.detach() + 0.5 * w.detach().std(0, keepdim=True)
                          * torch.randn(w.shape, generator=gen))
                fake = generator(w_fake)
                _, d_loss = adversarial_losses(disc(x), disc(fake.detach()))
                d_total = d_loss + r1_penalty(disc, x)
                d_opt.zero_grad()
                d_total.backward()
                d_opt.step()
                g_adv, _ = adversarial_losses(disc(x).detach(), disc(fake))
                loss = loss + 0.1 * g_adv
                terms["adv"] = g_adv.detach()
            check_finite(loss, "pretrain_generator", epoch, step, terms)
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.add(len(idx), loss=loss.detach(), **terms)
        row = curve.close_epoch(epoch)
        log.info("pretrain epoch %d: %s", epoch, row)
    with torch.no_grad():
        latents = torch.cat([enc(images[i:i + 256]) for i in range(0, n, 256)])
    mean, chol = _latent_gaussian(latents)
    return PretrainedGenerator(freeze(generator), mean, chol, curve.rows)


# -- conditional training ------------------------------------------------------
@dataclass
class TrainResult:
    model: ImitatorModel
    curve: list
    pretrain_curve: list | None = None


def train_imitator(flat: np.ndarray, renders: np.ndarray, kit: LossKit, arch: ImitatorArch,
                   cfg: ImitatorTrainConfig, pretrained: PretrainedGenerator | None = None) -> TrainResult:
    """Fit the imitator to (flat encoding, engine render) pairs with the pixel/perceptual/identity objective."""
    if cfg.two_step and pretrained is None:
        raise ConfigError("two_step training needs a pretrained generator")
    gen = seeded_generator(cfg.seed)
    model = ImitatorModel(flat.shape[1], arch)
    if cfg.two_step:
        model.generator.load_state_dict(pretrained.generator.state_dict())
        model.generator.requires_grad_(True)
    model.train()
    x_all = torch.from_numpy(np.asarray(flat, dtype=np.float32))
    y_all = to_tensor(renders)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = step_decay(opt, cfg.decay_every, cfg.decay)
    curve = CurveLog()
    for epoch in range(cfg.epochs):
        lr = opt.param_groups[0]["lr"]
        for step, idx in enumerate(minibatches(len(x_all), cfg.batch_size, gen)):
            out = imitator_loss(kit, model(x_all[idx]), y_all[idx], cfg.weights)
            loss = out.total.mean()
            check_finite(loss, "train_imitator", epoch, step, {k: v.mean() for k, v in out.terms.items()})
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.add(len(idx), total=loss.detach(), **{k: v.detach().mean() for k, v in out.terms.items()})
        sched.step()
        log.info("imitator epoch %d: %s", epoch, curve.close_epoch(epoch, lr=lr))
    return TrainResult(freeze(model), curve.rows, pretrained.curve if pretrained else None)


# -- inference wrapper -------------------------------------------------------
class Imitator:
    """Trained imitator bound to a schema."""

    def __init__(self, schema: AttributeSchema, model: ImitatorModel | None = None, arch: ImitatorArch | None = None):
        self.schema = schema
        self.model = freeze(model) if model is not None else None
        self.arch = arch or (model.arch if model is not None else ImitatorArch())

    @property
    def trained(self) -> bool:
        return self.model is not None

    def _require(self) -> ImitatorModel:
        if self.model is None:
            raise NotTrainedError("imitator: model is not trained; run train-imitator or load a checkpoint")
        return self.model

    def forward(self, flat: torch.Tensor) -> torch.Tensor:
        """Differentiable ``(B, flat_size) -> (B, 3, H, W)``; dtype follows the model."""
        model = self._require()
        if flat.ndim != 2 or flat.shape[1] != self.schema.flat_size:
            raise ValueError(f"expected (B, {self.schema.flat_size}) encodings, got {tuple(flat.shape)}")
        return model(flat)

    def forward_batched(self, flat: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
        with torch.no_grad():
            return torch.cat([self.forward(flat[i:i + batch_size]) for i in range(0, len(flat), batch_size)])

    def imitate(self, v) -> np.ndarray:
        """Image (H, W, 3) in [0, 1] for a strict or relaxed vector."""
        model = self._require()
        dtype = next(model.parameters()).dtype
        x = torch.tensor(flatten(v).values, dtype=dtype)[None]
        with torch.no_grad():
            return to_numpy(model(x))[0]

    def imitate_many(self, vectors) -> np.ndarray:
        model = self._require()
        dtype = next(model.parameters()).dtype
        x = torch.from_numpy(np.stack([flatten(v).values for v in vectors])).to(dtype)
        return to_numpy(self.forward_batched(x))

    def interpolation_sweep(self, v1, v2, steps: int) -> list[np.ndarray]:
        """Images along the straight line from ``v1`` to ``v2`` at alpha = i / (steps - 1)."""
        if steps < 2:
            raise ValueError("interpolation_sweep needs steps >= 2")
        # one frame per forward pass: batched float32 matmuls differ in the last bits from the
        # single-image path, and the endpoints must equal imitate(v1) / imitate(v2) exactly
        return [self.imitate(interpolate(v1, v2, i / (steps - 1))) for i in range(steps)]

    # -- persistence --------------------------------------------------------
    def save(self, path, extra: dict | None = None) -> None:
        model = self._require()
        io.save_checkpoint(path, "imitator", self.schema.hash(), {"arch": asdict(self.arch), "schema": self.schema.to_dict()},
                           model.state_dict(), extra)

    @classmethod
    def load(cls, path, schema: AttributeSchema | None = None) -> "Imitator":
        blob = io.load_checkpoint(path, "imitator", schema.hash() if schema is not None else None)
        schema = schema or AttributeSchema.from_dict(blob["config"]["schema"])
        arch = ImitatorArch(**blob["config"]["arch"])
        model = ImitatorModel(schema.flat_size, arch)
        model.load_state_dict(blob["state"])
        return cls(schema, model, arch)


def sweep_statistics(frames: list[np.ndarray]) -> dict:
    """Consecutive-frame mean-L1 distances and the derived smoothness figures."""
    d = np.array([np.abs(frames[i + 1] - frames[i]).mean() for i in range(len(frames) - 1)])
    from_start = np.array([np.abs(f - frames[0]).mean() for f in frames])
    mean = float(d.mean())
    return {
        "consecutive": d,
        "max_over_mean": float(d.max() / mean) if mean > 0 else 1.0,
        "monotone_from_start": bool(np.all(np.diff(from_start) >= -1e-9)),
        "lipschitz": float(d.max() * (len(frames) - 1)),
    }


def held_out_l1(imitator: Imitator, vectors: list[StrictAvatarVector], renders: np.ndarray) -> float:
    """Mean absolute pixel error against engine renders (uint8 or float)."""
    out = imitator.imitate_many(vectors)
    target = renders.astype(np.float64) / 255.0 if renders.dtype == np.uint8 else renders
    return float(np.abs(out - target).mean())


def localization_ratio(imitator: Imitator, engine, v: StrictAvatarVector, attr: int, new_index: int) -> float | None:
    """Inside/outside ratio of the imitator's change when one discrete index changes.

    The region is where the engine's segmentation changes. Returns None when the
    toggle changes no engine pixel.
    """
    w = v.replace(**{v.schema.discrete[attr].name: new_index})
    r0, r1 = engine.render(v), engine.render(w)
    region = (r0.segmentation != r1.segmentation) | (np.abs(r0.image - r1.image).sum(-1) > 1e-6)
    if not region.any() or region.all():
        return None
    diff = np.abs(imitator.imitate(w) - imitator.imitate(v)).sum(-1)
    return float(diff[region].mean() / max(diff[~region].mean(), 1e-12))


