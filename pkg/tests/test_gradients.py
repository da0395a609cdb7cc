"""Central finite-difference checks of every differentiable objective and of the imitator.

Everything runs in float64. Networks get random (non-default) parameters so
that no path is trivially flat. Composite paths run through networks with
instance norm and several nonlinearities and use the looser tolerance.
"""
import numpy as np
import pytest
import torch

from avatarfit.engine.render import N_LABELS
from avatarfit.imitator import Imitator, ImitatorArch, ImitatorModel
from avatarfit.losses import (
    LossKit,
    adversarial_losses,
    identity_loss,
    imitator_loss,
    mapper_loss,
    perceptual_loss,
    r1_penalty,
    semantic_color_loss,
)
from avatarfit.mapper import MapperArch, MapperModel, scaled_softmax
from avatarfit.nets import Discriminator, FeatureExtractor, IdentityEmbedder, SegNet

from .oracles import central_difference, relative_error

D = torch.float64
SEEDS = (0, 1, 2)
STANDALONE_TOL = 1e-4
COMPOSITE_TOL = 1e-3
N_COORDS = 20


def randomize(module: torch.nn.Module, seed: int, scale: float = 0.3) -> torch.nn.Module:
    """Double precision, frozen, with every parameter redrawn (zero-initialized modulations included)."""
    g = torch.Generator().manual_seed(seed)
    module.to(D)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=g, dtype=D))
    module.requires_grad_(False)
    return module.eval()


def make_kit(seed: int) -> LossKit:
    torch.manual_seed(seed)
    kit = LossKit(FeatureExtractor(seed), IdentityEmbedder(), SegNet(N_LABELS)).to(D)
    randomize(kit.embedder, seed + 10)
    return kit


def check(fn, x: np.ndarray, seed: int, tol: float, n_coords: int = N_COORDS, h: float = 1e-6) -> float:
    """Autograd partials of scalar ``fn`` vs central differences at random coordinates of ``x``."""
    coords = np.random.default_rng(seed).choice(x.size, size=min(n_coords, x.size), replace=False)
    t = torch.from_numpy(x.copy()).requires_grad_(True)
    (grad,) = torch.autograd.grad(fn(t), t)
    analytic = grad.numpy().ravel()[coords]

    def scalar(arr):
        with torch.no_grad():
            return float(fn(torch.from_numpy(arr)))

    numeric = central_difference(scalar, x, coords, h)
    err = relative_error(analytic, numeric)
    assert err < tol, f"relative error {err:.3e} >= {tol:g}"
    return err


def images(seed: int, n: int = 2, size: int = 16) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, (n, 3, size, size)), rng.uniform(0.05, 0.95, (n, 3, size, size))


def soft_segs(seed: int, n: int = 2, size: int = 16) -> torch.Tensor:
    logits = torch.from_numpy(np.random.default_rng(seed + 99).normal(0, 2, (n, N_LABELS, size, size)))
    return torch.softmax(logits, dim=1)


# -- standalone losses ----------------------------------------------------------
@pytest.mark.parametrize("seed", SEEDS)
def test_semantic_color_loss_gradient(seed):
    a, b = images(seed)
    sa, sb = soft_segs(seed), soft_segs(seed + 1)
    check(lambda x: semantic_color_loss(x, sa, torch.from_numpy(b), sb).sum(), a, seed, STANDALONE_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_semantic_color_loss_gradient_with_hard_labels(seed):
    a, b = images(seed)
    rng = np.random.default_rng(seed)
    la = torch.from_numpy(rng.integers(0, N_LABELS, (2, 16, 16)))
    lb = torch.from_numpy(rng.integers(0, N_LABELS, (2, 16, 16)))
    check(lambda x: semantic_color_loss(torch.from_numpy(b), lb, x, la).sum(), a, seed, STANDALONE_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_perceptual_loss_gradient(seed):
    kit = make_kit(seed)
    a, b = images(seed)
    check(lambda x: perceptual_loss(kit.extractor, x, torch.from_numpy(b)).sum(), a, seed, STANDALONE_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_identity_loss_gradient(seed):
    kit = make_kit(seed)
    a, b = images(seed)
    check(lambda x: identity_loss(kit.embedder, x, torch.from_numpy(b)).sum(), a, seed, STANDALONE_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_imitator_loss_gradient_wrt_generated_image(seed):
    kit = make_kit(seed)
    a, b = images(seed)
    check(lambda x: imitator_loss(kit, x, torch.from_numpy(b)).total.sum(), a, seed, STANDALONE_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_adversarial_loss_gradients_wrt_scores(seed):
    rng = np.random.default_rng(seed)
    # keep scores away from the hinge kinks at +-1
    real = rng.choice([-1, 1], 12) * rng.uniform(0.2, 0.8, 12) + rng.choice([-2.0, 0.0, 2.0], 12)
    fake = rng.choice([-1, 1], 12) * rng.uniform(0.2, 0.8, 12) + rng.choice([-2.0, 0.0, 2.0], 12)
    scores = np.concatenate([real, fake])

    def disc(x):
        return adversarial_losses(x[:12], x[12:])[1]

    def gen(x):
        return adversarial_losses(x[:12], x[12:])[0]

    check(disc, scores, seed, STANDALONE_TOL, n_coords=24)
    check(gen, scores, seed, STANDALONE_TOL, n_coords=24)


# -- composite paths -----------------------------------------------------------------
@pytest.mark.parametrize("seed", SEEDS)
def test_mapper_loss_gradient_wrt_imitated_image(seed):
    kit = make_kit(seed)
    style, img = images(seed)
    s_style, s_img = soft_segs(seed), soft_segs(seed + 1)
    check(lambda x: mapper_loss(kit, torch.from_numpy(style), x, s_style, s_img).total.sum(), img, seed,
          COMPOSITE_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_r1_penalty_gradient_wrt_discriminator_weights(seed):
    # the penalty detaches its input; training differentiates it w.r.t. the critic's parameters
    torch.manual_seed(seed)
    disc = randomize(Discriminator(8, width=4), seed, scale=0.5)
    names = [n for n, _ in disc.named_parameters()]
    shapes = [p.shape for p in disc.parameters()]
    flat0 = torch.cat([p.detach().flatten() for p in disc.parameters()]).numpy()
    x = torch.from_numpy(images(seed, 2, 8)[0])

    def penalty(theta):
        parts = torch.split(theta, [int(np.prod(s)) for s in shapes])
        params = {n: t.view(s) for n, t, s in zip(names, parts, shapes)}
        return r1_penalty(lambda y: torch.func.functional_call(disc, params, (y,)), x)

    check(penalty, flat0, seed, COMPOSITE_TOL)


def small_imitator(schema, seed: int) -> Imitator:
    arch = ImitatorArch(size=16, n_styles=3, style_dim=8, width=0.25, mlp_hidden=16)
    torch.manual_seed(seed)
    model = randomize(ImitatorModel(schema.flat_size, arch), seed)
    return Imitator(schema, model, arch)


@pytest.mark.parametrize("seed", SEEDS)
def test_imitator_output_gradient_wrt_relaxed_vector(schema, seed):
    imitator = small_imitator(schema, seed)
    flat = schema.random_strict(seed).relax().flatten().values[None].copy()
    weights = torch.from_numpy(np.random.default_rng(seed).normal(size=(1, 3, 16, 16)))
    check(lambda v: (imitator.forward(v) * weights).sum(), flat, seed, COMPOSITE_TOL, n_coords=10)


@pytest.mark.parametrize("seed", SEEDS)
def test_mapper_loss_through_imitator_gradient_wrt_relaxed_vector(schema, seed):
    kit = make_kit(seed)
    imitator = small_imitator(schema, seed)
    rng = np.random.default_rng(seed)
    # an interior point of the simplex product: mixtures of two random vectors
    v = 0.6 * schema.random_strict(seed).relax().flatten().values + 0.4 * schema.random_strict(seed + 50).relax(
    ).flatten().values
    target = torch.from_numpy(rng.uniform(0.05, 0.95, (1, 3, 16, 16)))
    s_target, s_img = soft_segs(seed, 1), soft_segs(seed + 1, 1)
    check(lambda x: mapper_loss(kit, target, imitator.forward(x), s_target, s_img).total.sum(), v[None].copy(),
          seed, COMPOSITE_TOL, n_coords=10)


@pytest.mark.parametrize("seed", SEEDS)
def test_full_mapper_path_gradient_wrt_latent(schema, seed):
    kit = make_kit(seed)
    imitator = small_imitator(schema, seed)
    torch.manual_seed(seed)
    mapper = randomize(MapperModel(schema, MapperArch(n_styles=2, style_dim=6, layer_hidden=8, layer_out=4,
                                                      head_hidden=16)), seed + 3)
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(1, 2, 6))
    target = torch.from_numpy(rng.uniform(0.05, 0.95, (1, 3, 16, 16)))
    s_target, s_img = soft_segs(seed, 1), soft_segs(seed + 1, 1)

    def loss(x):
        return mapper_loss(kit, target, imitator.forward(mapper.flat(x, beta=3.0)), s_target, s_img).total.sum()

    check(loss, w, seed, COMPOSITE_TOL, n_coords=12)


@pytest.mark.parametrize("seed", SEEDS)
def test_scaled_softmax_gradient(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 2, (3, 7))
    weights = torch.from_numpy(rng.normal(size=(3, 7)))
    check(lambda t: (scaled_softmax(t, 4.0) * weights).sum(), x, seed, STANDALONE_TOL)
