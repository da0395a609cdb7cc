"""Image losses and the frozen networks they are measured with.

Images are float tensors shaped ``(B, 3, H, W)`` (or ``(3, H, W)``) in linear
[0, 1] RGB. Segmentations are either integer label maps ``(B, H, W)`` or soft
class probabilities ``(B, K, H, W)``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .engine.render import N_LABELS, Engine, Label
from .engine.selfie import SelfieCorruption, synth_selfie
from .nets import FeatureExtractor, IdentityEmbedder, SegNet, freeze

log = logging.getLogger(__name__)

SEMANTIC_CLASSES: tuple[int, ...] = (int(Label.HAIR), int(Label.SKIN))
ABSENT = None  # returned by mean_semantic_color for an empty class region
# soft masks count a class as present once it carries half a pixel of mass
MIN_CLASS_MASS = 0.5


# -- conversions --------------------------------------------------------------
def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """(B, H, W, 3) uint8 or float array -> (B, 3, H, W) float tensor in [0, 1]."""
    a = np.asarray(images)
    scale = 255.0 if a.dtype == np.uint8 else 1.0
    t = torch.tensor(a, dtype=dtype) / scale  # copies, so read-only inputs are fine
    return t.permute(0, 3, 1, 2).contiguous() if t.ndim == 4 else t.permute(2, 0, 1).contiguous()


def to_numpy(images: torch.Tensor) -> np.ndarray:
    """(B, 3, H, W) tensor -> (B, H, W, 3) float64 array."""
    t = images.detach().to(torch.float64)
    return (t.permute(0, 2, 3, 1) if t.ndim == 4 else t.permute(1, 2, 0)).cpu().numpy()


def _batch(x: torch.Tensor, image_ndim: int = 3) -> tuple[torch.Tensor, bool]:
    return (x.unsqueeze(0), True) if x.ndim == image_ndim else (x, False)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


# -- semantic color -----------------------------------------------------------
def class_weights(seg: torch.Tensor, k: int) -> torch.Tensor:
    """Per-pixel membership of class ``k`` as float weights ``(B, H, W)``."""
    if seg.is_floating_point():
        if seg.ndim != 4:
            raise ValueError("soft segmentations must be shaped (B, K, H, W)")
        return seg[:, k]
    return (seg == k).to(torch.get_default_dtype())


def batch_mean_colors(img: torch.Tensor, seg: torch.Tensor, k: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean RGB of class ``k`` per image: ``(colors (B, 3), present (B,) bool)``."""
    w = class_weights(seg, k).to(img.dtype)
    mass = w.sum(dim=(1, 2))
    present = mass >= MIN_CLASS_MASS if seg.is_floating_point() else mass > 0
    colors = (img * w[:, None]).sum(dim=(2, 3)) / mass.clamp_min(1e-12)[:, None]
    return colors, present


def mean_semantic_color(img: torch.Tensor, seg: torch.Tensor, k: int):
    """Mean color of the pixels of class ``k`` in one image, or ``ABSENT``."""
    if k not in SEMANTIC_CLASSES:
        raise ValueError(f"class {k} is not a semantic color class {SEMANTIC_CLASSES}")
    colors, present = batch_mean_colors(img.unsqueeze(0), seg.unsqueeze(0), k)
    return colors[0] if bool(present[0]) else ABSENT


def semantic_color_loss(img_a, seg_a, img_b, seg_b, classes=SEMANTIC_CLASSES) -> torch.Tensor:
    """Sum over classes of the squared distance between mean class colors.

    Classes absent from either image contribute nothing. Batched inputs give
    one value per sample.
    """
    _check_same_shape(img_a, img_b)
    img_a, single = _batch(img_a)
    img_b, _ = _batch(img_b)
    seg_a = seg_a.unsqueeze(0) if single else seg_a
    seg_b = seg_b.unsqueeze(0) if single else seg_b
    total = img_a.new_zeros(img_a.shape[0])
    for k in classes:
        ca, pa = batch_mean_colors(img_a, seg_a, k)
        cb, pb = batch_mean_colors(img_b, seg_b, k)
        both = (pa & pb).to(img_a.dtype)
        total = total + both * ((ca - cb) ** 2).sum(dim=1)
    return total[0] if single else total


# -- perceptual and identity ----------------------------------------------------
def _safe_norm(x: torch.Tensor) -> torch.Tensor:
    # zero gradient (rather than NaN) where the difference vanishes
    sq = (x * x).sum(dim=1)
    pos = sq > 0
    return torch.where(pos, sq.clamp_min(torch.finfo(sq.dtype).tiny).sqrt(), torch.zeros_like(sq))


def perceptual_loss(extractor: FeatureExtractor, img_a: torch.Tensor, img_b: torch.Tensor) -> torch.Tensor:
    """L2 distance between stage-normalized feature pyramids."""
    _check_same_shape(img_a, img_b)
    a, single = _batch(img_a)
    b, _ = _batch(img_b)
    d = _safe_norm(extractor(a) - extractor(b))
    return d[0] if single else d


def identity_loss(embedder: IdentityEmbedder, img_a: torch.Tensor, img_b: torch.Tensor) -> torch.Tensor:
    """``1 - cos`` of identity embeddings, in [0, 2]."""
    _check_same_shape(img_a, img_b)
    a, single = _batch(img_a)
    b, _ = _batch(img_b)
    cos = (embedder(a) * embedder(b)).sum(dim=1)
    d = (1.0 - cos).clamp(0.0, 2.0)
    return d[0] if single else d


# -- adversarial ----------------------------------------------------------------
def hinge_terms(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """``(E[min(0, -1 + D(y))], E[min(0, -1 - D(G(w)))])``; both are <= 0 and the critic maximizes their sum."""
    real_term = torch.clamp(real_scores - 1.0, max=0.0).mean()
    fake_term = torch.clamp(-1.0 - fake_scores, max=0.0).mean()
    return real_term, fake_term


def adversarial_losses(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """``(gen_loss, disc_loss)``, both to be minimized."""
    real_term, fake_term = hinge_terms(real_scores, fake_scores)
    return -fake_scores.mean(), -(real_term + fake_term)


def r1_penalty(discriminator, real: torch.Tensor, gamma: float = 10.0) -> torch.Tensor:
    """``(gamma / 2) * E[||grad_x D(x)||^2]`` over the real batch."""
    # the input gradient is needed even when called under no_grad
    with torch.enable_grad():
        x = real.detach().requires_grad_(True)
        out = discriminator(x)
        if not out.requires_grad:  # output independent of the input
            return x.new_zeros(())
        (grad,) = torch.autograd.grad(out.sum(), x, create_graph=True, allow_unused=True)
        if grad is None:
            return x.new_zeros(())
        return 0.5 * gamma * grad.pow(2).flatten(1).sum(dim=1).mean()


# -- composite objectives -------------------------------------------------------
@dataclass(frozen=True)
class MapperLossWeights:
    identity: float = 0.4
    perceptual: float = 0.8
    color: float = 0.8


@dataclass(frozen=True)
class ImitatorLossWeights:
    pixel: float = 1.0
    perceptual: float = 0.8
    identity: float = 1.0


@dataclass(frozen=True)
class StylizeLossWeights:
    adversarial: float = 1.0
    semantic: float = 12.0
    r1: float = 5.0


@dataclass
class LossTerms:
    """Weighted total plus the unweighted per-term values, one entry per sample."""

    total: torch.Tensor
    terms: dict[str, torch.Tensor] = field(default_factory=dict)

    def rows(self, sample_ids) -> list[tuple]:
        """(sample_id, term, value) rows for CSV logs."""
        out = []
        named = {**self.terms, "total": self.total}
        for j, sid in enumerate(sample_ids):
            for name, t in named.items():
                out.append((sid, name, float(t.reshape(-1)[j])))
        return out


class LossKit:
    """The frozen networks behind the composite objectives."""

    def __init__(self, extractor: FeatureExtractor, embedder: IdentityEmbedder, segnet: SegNet | None = None):
        self.extractor = freeze(extractor)
        self.embedder = freeze(embedder)
        self.segnet = freeze(segnet) if segnet is not None else None

    def to(self, dtype) -> "LossKit":
        self.extractor.to(dtype)
        self.embedder.to(dtype)
        if self.segnet is not None:
            self.segnet.to(dtype)
        return self

    def segment(self, images: torch.Tensor) -> torch.Tensor:
        """Soft class probabilities, detached: masks select pixels, they are not optimized."""
        if self.segnet is None:
            raise RuntimeError("the loss kit has no segmentation network")
        with torch.no_grad():
            return torch.softmax(self.segnet(images), dim=1)

    def state(self) -> dict:
        return {
            "extractor_seed": self.extractor.seed,
            "embedder": self.embedder.state_dict(),
            "segnet": None if self.segnet is None else self.segnet.state_dict(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "LossKit":
        emb = IdentityEmbedder()
        emb.load_state_dict(state["embedder"])
        seg = None
        if state.get("segnet") is not None:
            seg = SegNet(N_LABELS)
            seg.load_state_dict(state["segnet"])
        return cls(FeatureExtractor(state["extractor_seed"]), emb, seg)


def mapper_loss(kit: LossKit, style: torch.Tensor, imitate: torch.Tensor, seg_style=None, seg_imitate=None,
                weights: MapperLossWeights = MapperLossWeights()) -> LossTerms:
    """Identity, perceptual and semantic-color terms between a stylized and an imitated image.

    Missing segmentations are predicted by the kit's segmentation network.
    Zero-weighted terms are still evaluated so that logs stay complete.
    """
    _check_same_shape(style, imitate)
    style, single = _batch(style)
    imitate, _ = _batch(imitate)
    if seg_style is None:
        seg_style = kit.segment(style)
    elif single:
        seg_style = seg_style.unsqueeze(0)
    if seg_imitate is None:
        seg_imitate = kit.segment(imitate)
    elif single:
        seg_imitate = seg_imitate.unsqueeze(0)
    ident = identity_loss(kit.embedder, style, imitate)
    lp = perceptual_loss(kit.extractor, style, imitate)
    color = semantic_color_loss(style, seg_style, imitate, seg_imitate)
    total = weights.identity * ident + weights.perceptual * lp + weights.color * color
    out = LossTerms(total, {"id": ident, "lpips": lp, "color": color})
    return _unbatch(out) if single else out


def imitator_loss(kit: LossKit, generated: torch.Tensor, target: torch.Tensor,
                  weights: ImitatorLossWeights = ImitatorLossWeights()) -> LossTerms:
    """Mean absolute pixel error plus perceptual and identity terms."""
    _check_same_shape(generated, target)
    gen, single = _batch(generated)
    gt, _ = _batch(target)
    l1 = (gen - gt).abs().flatten(1).mean(dim=1)
    lp = perceptual_loss(kit.extractor, gen, gt)
    ident = identity_loss(kit.embedder, gen, gt)
    total = weights.pixel * l1 + weights.perceptual * lp + weights.identity * ident
    out = LossTerms(total, {"l1": l1, "lpips": lp, "id": ident})
    return _unbatch(out) if single else out


def stylize_loss(adv, sem, r1, weights: StylizeLossWeights = StylizeLossWeights()):
    return weights.adversarial * adv + weights.semantic * sem + weights.r1 * r1


def _unbatch(t: LossTerms) -> LossTerms:
    return LossTerms(t.total[0], {k: v[0] for k, v in t.terms.items()})


def weights_dict(w) -> dict:
    return asdict(w)


# -- training the stand-in networks --------------------------------------------
def gaussian_blur(x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Per-sample separable Gaussian blur; ``sigma`` in pixels, shape (B,)."""
    radius = 2
    offs = torch.arange(-radius, radius + 1, dtype=x.dtype)
    s = sigma.to(x.dtype).clamp_min(1e-3)[:, None]
    k = torch.exp(-0.5 * (offs[None] / s) ** 2)
    k = k / k.sum(dim=1, keepdim=True)  # (B, 5)
    b, c, h, w = x.shape
    xp = F.pad(x, (radius, radius, radius, radius), mode="replicate")
    # horizontal then vertical pass as weighted sums of shifted copies
    xh = sum(k[:, i, None, None, None] * xp[:, :, :, i:i + w] for i in range(2 * radius + 1))
    return sum(k[:, i, None, None, None] * xh[:, :, i:i + h, :] for i in range(2 * radius + 1))


def augment(x: torch.Tensor, gen: torch.Generator, max_blur: float = 1.0) -> torch.Tensor:
    """Random blur and mild brightness jitter; mimics the softness of generated images."""
    b = x.shape[0]
    sigma = torch.rand(b, generator=gen) * max_blur
    blur = torch.rand(b, generator=gen) < 0.5
    out = torch.where(blur[:, None, None, None], gaussian_blur(x, sigma), x)
    gain = 1.0 + 0.1 * (torch.rand(b, 1, 1, 1, generator=gen) - 0.5)
    return (out * gain).clamp(0.0, 1.0)


@dataclass(frozen=True)
class KitConfig:
    n_vectors: int = 3000
    views_per_vector: int = 2  # corrupted views, in addition to the clean render
    embedder_epochs: int = 12
    segnet_epochs: int = 6
    batch_size: int = 64
    lr: float = 2e-3
    temperature: float = 0.1
    extractor_seed: int = 0
    seed: int = 0


@dataclass
class ViewSet:
    """Several renders of each vector: view 0 is clean, the rest are corrupted selfies."""

    images: np.ndarray  # (n, V, H, W, 3) uint8
    segs: np.ndarray  # (n, V, H, W) uint8


def build_views(engine: Engine, n: int, views: int, seed: int) -> ViewSet:
    from .io import to_uint8

    size = engine.size
    imgs = np.empty((n, views + 1, size, size, 3), np.uint8)
    segs = np.empty((n, views + 1, size, size), np.uint8)
    for i in range(n):
        rng = np.random.default_rng([seed, 7, i])
        v = engine.schema.random_strict(rng)
        out = engine.render(v)
        imgs[i, 0], segs[i, 0] = to_uint8(out.image), out.segmentation
        for j in range(views):
            img, seg = synth_selfie(engine, v, SelfieCorruption.sample(rng))
            imgs[i, j + 1], segs[i, j + 1] = to_uint8(img), seg
    return ViewSet(imgs, segs)


def train_identity_embedder(views: ViewSet, cfg: KitConfig) -> tuple[IdentityEmbedder, list[float]]:
    """Symmetric InfoNCE: two random views of one vector are positives, other vectors in the batch negatives."""
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model = IdentityEmbedder()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    n, v = views.images.shape[:2]
    data = to_tensor(views.images.reshape(-1, *views.images.shape[2:])).view(n, v, 3, *views.images.shape[2:4])
    curve = []
    for _ in range(cfg.embedder_epochs):
        perm = torch.randperm(n, generator=gen)
        total, count = 0.0, 0
        for s in range(0, n - 1, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            if len(idx) < 2:
                continue
            ia = torch.randint(v, (len(idx),), generator=gen)
            ib = (ia + 1 + torch.randint(v - 1, (len(idx),), generator=gen)) % v
            a = augment(data[idx, ia], gen)
            b = augment(data[idx, ib], gen)
            logits = model(a) @ model(b).T / cfg.temperature
            target = torch.arange(len(idx))
            loss = 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        curve.append(total / max(count, 1))
        log.info("embedder epoch %d: %.4f", len(curve), curve[-1])
    return freeze(model), curve


def train_segnet(views: ViewSet, cfg: KitConfig) -> tuple[SegNet, list[float]]:
    """Per-pixel cross-entropy on (view, exact segmentation) pairs with blur augmentation."""
    torch.manual_seed(cfg.seed + 1)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    model = SegNet(N_LABELS)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    size = views.images.shape[2]
    x_all = to_tensor(views.images.reshape(-1, size, size, 3))
    y_all = torch.from_numpy(views.segs.reshape(-1, size, size).astype(np.int64))
    n = len(x_all)
    curve = []
    for _ in range(cfg.segnet_epochs):
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            loss = F.cross_entropy(model(augment(x_all[idx], gen)), y_all[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        curve.append(total / n)
        log.info("segnet epoch %d: %.4f", len(curve), curve[-1])
    return freeze(model), curve


def build_loss_kit(engine: Engine, cfg: KitConfig = KitConfig()) -> tuple[LossKit, dict]:
    views = build_views(engine, cfg.n_vectors, cfg.views_per_vector, cfg.seed)
    emb, emb_curve = train_identity_embedder(views, cfg)
    seg, seg_curve = train_segnet(views, cfg)
    return LossKit(FeatureExtractor(cfg.extractor_seed), emb, seg), {"embedder": emb_curve, "segnet": seg_curve}
