"""Selfie normalization: encode a corrupted pseudo-selfie into a latent stack
and decode it to a neutral, clean avatar-domain image.

Training is supervised on synthetic pairs (corrupted selfie -> clean render of
the same vector). An optional adversarial fine-tune moves a copy of the
decoder toward an exemplar set while a semantic color term anchors it to the
original decoder.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import io
from .errors import ConfigError, NotTrainedError, TrainingDivergedError
from .losses import (
    LossKit,
    StylizeLossWeights,
    adversarial_losses,
    identity_loss,
    perceptual_loss,
    r1_penalty,
    semantic_color_loss,
    stylize_loss,
    to_numpy,
    to_tensor,
)
from .nets import ConvEncoder, Discriminator, StyleGenerator, freeze
from .schema import AttributeSchema
from .training import CurveLog, check_finite, minibatches, seeded_generator, step_decay

log = logging.getLogger(__name__)

EXEMPLAR_COUNT = 150


@dataclass(frozen=True)
class StylizerArch:
    size: int = 64
    n_styles: int = 6
    style_dim: int = 128
    width: float = 1.0
    encoder_width: int = 32
    # pin each style vector to unit RMS; needed when the decoder is trained from scratch with latent_weight > 0
    unit_rms: bool = False


@dataclass(frozen=True)
class StylizerTrainConfig:
    epochs: int = 12
    lr: float = 0.002
    decay: float = 0.5
    decay_every: int = 4
    batch_size: int = 64
    perceptual_weight: float = 0.8
    color_weight: float = 0.8
    identity_weight: float = 1.0
    # cross-entropy of the frozen segmenter on the decoded image against the clean label map
    segmentation_weight: float = 0.0
    # with an initial decoder: keep it fixed, so training only learns to invert it
    freeze_init_decoder: bool = True
    # pulls the selfie latent toward the (detached) latent of its clean render
    latent_weight: float = 0.0
    # max global gradient norm per step (0 disables)
    grad_clip: float = 1.0
    clean_input_fraction: float = 0.2
    seed: int = 0


@dataclass(frozen=True)
class FinetuneConfig:
    steps: int = 300
    batch_size: int = 32
    lr: float = 2e-4
    gamma: float = 10.0
    weights: StylizeLossWeights = StylizeLossWeights()
    prior_sigma: float = 0.05
    seed: int = 0


class StylePrior:
    """Empirical latent distribution: stored clean-render codes plus Gaussian jitter."""

    def __init__(self, codes: np.ndarray, sigma: float = 0.05):
        self.codes = np.asarray(codes, dtype=np.float32)
        self.sigma = float(sigma)

    def __len__(self) -> int:
        return len(self.codes)

    def sample(self, n: int, seed: int) -> np.ndarray:
        if len(self.codes) == 0:
            raise NotTrainedError("style prior is empty; build it from clean renders first")
        rng = np.random.default_rng(seed)
        idx = rng.integers(len(self.codes), size=n)
        out = self.codes[idx]
        if self.sigma > 0:
            out = out + self.sigma * rng.standard_normal(out.shape).astype(np.float32)
        return out


class Stylizer:
    def __init__(self, schema: AttributeSchema | None, arch: StylizerArch, encoder: ConvEncoder | None = None,
                 decoder: StyleGenerator | None = None, finetuned: StyleGenerator | None = None,
                 prior: StylePrior | None = None):
        self.schema = schema
        self.arch = arch
        self.encoder = freeze(encoder) if encoder is not None else None
        self.decoder = freeze(decoder) if decoder is not None else None
        self.finetuned = freeze(finetuned) if finetuned is not None else None
        self.prior = prior

    @property
    def trained(self) -> bool:
        return self.encoder is not None and self.decoder is not None

    def _require(self):
        if not self.trained:
            raise NotTrainedError("stylizer: encoder/decoder not trained; run train-stylizer or load a checkpoint")

    @property
    def output_decoder(self) -> StyleGenerator:
        self._require()
        return self.finetuned if self.finetuned is not None else self.decoder

    def encode_tensor(self, images: torch.Tensor) -> torch.Tensor:
        self._require()
        with torch.no_grad():
            return torch.cat([self.encoder(images[i:i + 256]) for i in range(0, len(images), 256)])

    def encode(self, image: np.ndarray) -> np.ndarray:
        """(H, W, 3) selfie -> (M, D) latent code."""
        return self.encode_many(image[None])[0]

    def encode_many(self, images: np.ndarray) -> np.ndarray:
        return self.encode_tensor(to_tensor(images)).numpy()

    def decode_tensor(self, latents: torch.Tensor, original: bool = False) -> torch.Tensor:
        self._require()
        dec = self.decoder if original else self.output_decoder
        with torch.no_grad():
            return torch.cat([dec(latents[i:i + 256]) for i in range(0, len(latents), 256)])

    def decode_many(self, latents: np.ndarray, original: bool = False) -> np.ndarray:
        return to_numpy(self.decode_tensor(torch.from_numpy(np.asarray(latents, dtype=np.float32)), original))

    def stylize_many(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(latents, normalized images) for a batch of selfies."""
        w = self.encode_many(images)
        return w, self.decode_many(w)

    def sample_prior(self, n: int, seed: int) -> np.ndarray:
        if self.prior is None:
            raise NotTrainedError("stylizer has no style prior")
        return self.prior.sample(n, seed)

    # -- persistence --------------------------------------------------------
    def save(self, path, extra: dict | None = None) -> None:
        self._require()
        state = {
            "encoder": self.encoder.state_dict(),
            "decoder": self.decoder.state_dict(),
            "finetuned": None if self.finetuned is None else self.finetuned.state_dict(),
            "prior_codes": None if self.prior is None else self.prior.codes,
            "prior_sigma": None if self.prior is None else self.prior.sigma,
        }
        schema_hash = self.schema.hash() if self.schema is not None else ""
        io.save_checkpoint(path, "stylizer", schema_hash, {"arch": asdict(self.arch)}, state, extra)

    @classmethod
    def load(cls, path, schema: AttributeSchema | None = None) -> "Stylizer":
        blob = io.load_checkpoint(path, "stylizer", schema.hash() if schema is not None else None)
        arch = StylizerArch(**blob["config"]["arch"])
        st = blob["state"]
        enc, dec = _make_networks(arch)
        enc.load_state_dict(st["encoder"])
        dec.load_state_dict(st["decoder"])
        ft = None
        if st["finetuned"] is not None:
            ft = StyleGenerator(arch.size, arch.n_styles, arch.style_dim, arch.width)
            ft.load_state_dict(st["finetuned"])
        prior = StylePrior(st["prior_codes"], st["prior_sigma"]) if st["prior_codes"] is not None else None
        return cls(schema, arch, enc, dec, ft, prior)


def _make_networks(arch: StylizerArch) -> tuple[ConvEncoder, StyleGenerator]:
    return (ConvEncoder(arch.size, arch.n_styles, arch.style_dim, arch.encoder_width, unit_rms=arch.unit_rms),
            StyleGenerator(arch.size, arch.n_styles, arch.style_dim, arch.width))


@dataclass
class StylizerTrainResult:
    stylizer: Stylizer
    curve: list


def train_stylizer(selfies: np.ndarray, renders: np.ndarray, segs: np.ndarray, kit: LossKit, arch: StylizerArch,
                   cfg: StylizerTrainConfig, schema: AttributeSchema | None = None,
                   prior_sigma: float = 0.05, init_decoder: StyleGenerator | None = None) -> StylizerTrainResult:
    """Supervised normalization: decode(encode(selfie)) should reproduce the clean render.

    ``init_decoder`` (typically the imitator's generator, which already renders
    engine-style images) seeds the decoder. Kept frozen, the decoder can only
    produce avatar-domain images and the encoder learns to invert it.

    ``segs`` are the exact segmentations of the clean renders; the color term
    uses them for both images since the decoder targets the clean geometry.
    """
    if not (len(selfies) == len(renders) == len(segs)):
        raise ConfigError("selfies, renders and segmentations must be aligned")
    gen = seeded_generator(cfg.seed)
    enc, dec = _make_networks(arch)
    if init_decoder is not None:
        dec.load_state_dict(init_decoder.state_dict())
    x_all, y_all = to_tensor(selfies), to_tensor(renders)
    s_all = torch.from_numpy(segs.astype(np.int64))
    params = list(enc.parameters())
    if init_decoder is not None and cfg.freeze_init_decoder:
        freeze(dec)
    else:
        params += list(dec.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    sched = step_decay(opt, cfg.decay_every, cfg.decay)
    curve = CurveLog()
    for epoch in range(cfg.epochs):
        lr = opt.param_groups[0]["lr"]
        for step, idx in enumerate(minibatches(len(x_all), cfg.batch_size, gen)):
            x, y, s = x_all[idx], y_all[idx], s_all[idx]
            use_clean = torch.rand(len(idx), generator=gen) < cfg.clean_input_fraction
            x = torch.where(use_clean[:, None, None, None], y, x)
            w = enc(x)
            out = dec(w)
            l1 = (out - y).abs().flatten(1).mean(1)
            lp = perceptual_loss(kit.extractor, out, y)
            color = semantic_color_loss(out, s, y, s)
            loss = (l1 + cfg.perceptual_weight * lp + cfg.color_weight * color).mean()
            terms = {"l1": l1.mean(), "lpips": lp.mean(), "color": color.mean()}
            if cfg.segmentation_weight > 0:
                seg_ce = F.cross_entropy(kit.segnet(out), s, reduction="none").flatten(1).mean(1)
                loss = loss + cfg.segmentation_weight * seg_ce.mean()
                terms["seg"] = seg_ce.mean()
            if cfg.identity_weight > 0:
                ident = identity_loss(kit.embedder, out, y)
                loss = loss + cfg.identity_weight * ident.mean()
                terms["id"] = ident.mean()
            if cfg.latent_weight > 0:
                with torch.no_grad():
                    w_clean = enc(y)
                lat = (w - w_clean).pow(2).flatten(1).mean(1).mean()
                loss = loss + cfg.latent_weight * lat
                terms["latent"] = lat
            check_finite(loss, "train_stylizer", epoch, step, terms)
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            opt.step()
            curve.add(len(idx), total=loss.detach(), **{k: v.detach() for k, v in terms.items()})
        sched.step()
        log.info("stylizer epoch %d: %s", epoch, curve.close_epoch(epoch, lr=lr))
    sty = Stylizer(schema, arch, enc, dec)
    sty.prior = StylePrior(sty.encode_many(renders), prior_sigma)
    return StylizerTrainResult(sty, curve.rows)


def exemplar_set(engine, n: int = EXEMPLAR_COUNT, seed: int = 0) -> np.ndarray:
    """Neutral clean renders of random vectors (zero-magnitude corruption only), uint8."""
    from .engine.dataset import clean_selfies

    vecs = [engine.schema.random_strict(np.random.default_rng([seed, 31, i])) for i in range(n)]
    return clean_selfies(engine, vecs)


@dataclass
class FinetuneResult:
    stylizer: Stylizer
    curve: list
    diverged: bool
    message: str = ""


def adversarial_finetune(stylizer: Stylizer, exemplars: np.ndarray, kit: LossKit, cfg: FinetuneConfig) -> FinetuneResult:
    """Adversarially adapt a copy of the decoder toward the exemplar set.

    Critic: maximizes the hinge objective with an R1 penalty on exemplars.
    Generator: hinge generator loss plus the semantic color term between the
    frozen and the adapted decoder on the same prior latents. On divergence
    the supervised decoder is kept.
    """
    stylizer._require()
    if stylizer.prior is None or len(stylizer.prior) == 0:
        raise NotTrainedError("adversarial fine-tuning samples from the style prior, which is empty")
    if kit.segnet is None:
        raise ConfigError("adversarial fine-tuning needs the loss kit's segmentation network")
    gen = seeded_generator(cfg.seed)
    arch = stylizer.arch
    frozen = stylizer.decoder
    tuned = copy.deepcopy(frozen)
    tuned.requires_grad_(True)
    tuned.train()
    disc = Discriminator(arch.size)
    g_opt = torch.optim.Adam(tuned.parameters(), lr=cfg.lr, betas=(0.0, 0.99))
    d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=(0.0, 0.99))
    real_all = to_tensor(exemplars)
    w = cfg.weights
    curve = CurveLog()
    try:
        for step in range(cfg.steps):
            ridx = torch.randint(len(real_all), (cfg.batch_size,), generator=gen)
            real = real_all[ridx]
            lat = torch.from_numpy(stylizer.prior.sample(cfg.batch_size, seed=cfg.seed * 100003 + step))
            fake = tuned(lat)
            # critic step
            _, d_adv = adversarial_losses(disc(real), disc(fake.detach()))
            r1 = r1_penalty(disc, real, cfg.gamma)
            d_loss = w.adversarial * d_adv + w.r1 * r1
            check_finite(d_loss, "adversarial_finetune/critic", 0, step)
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()
            # generator step
            with torch.no_grad():
                base = frozen(lat)
                seg_base = kit.segment(base)
            g_adv, _ = adversarial_losses(disc(real).detach(), disc(fake))
            sem = semantic_color_loss(base, seg_base, fake, kit.segment(fake)).mean()
            g_loss = stylize_loss(g_adv, sem, torch.zeros(()), w)
            check_finite(g_loss, "adversarial_finetune/generator", 0, step)
            g_opt.zero_grad()
            g_loss.backward()
            g_opt.step()
            curve.add(1, d_loss=d_loss.detach(), r1=r1.detach(), g_adv=g_adv.detach(), sem=sem.detach())
            if (step + 1) % 50 == 0 or step + 1 == cfg.steps:
                log.info("finetune step %d: %s", step, curve.close_epoch(step))
    except TrainingDivergedError as e:
        log.warning("adversarial fine-tune aborted: %s", e)
        return FinetuneResult(stylizer, curve.rows, True, str(e))
    out = Stylizer(stylizer.schema, arch, stylizer.encoder, frozen, tuned, stylizer.prior)
    return FinetuneResult(out, curve.rows, False)


def skin_color_drift(stylizer: Stylizer, kit: LossKit, n: int = 256, seed: int = 0) -> float:
    """Mean absolute skin-color difference between frozen and adapted decoders over prior samples."""
    from .engine.render import Label
    from .losses import batch_mean_colors

    lat = torch.from_numpy(stylizer.sample_prior(n, seed))
    a = stylizer.decode_tensor(lat, original=True)
    b = stylizer.decode_tensor(lat)
    ca, pa = batch_mean_colors(a, kit.segment(a), int(Label.SKIN))
    cb, pb = batch_mean_colors(b, kit.segment(b), int(Label.SKIN))
    both = pa & pb
    return float((ca[both] - cb[both]).abs().mean()) if both.any() else 0.0
