"""Network building blocks shared by the imitator, stylizer and loss substitutes."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

# channel width at each resolution of the style generator
_CHANNELS = {4: 128, 8: 128, 16: 64, 32: 32, 64: 16, 128: 8, 256: 8}


def n_upsamples(size: int) -> int:
    n = int(round(math.log2(size / 4)))
    if 4 * 2 ** n != size:
        raise ValueError(f"image size must be 4 * 2^k, got {size}")
    return n


class ModulatedBlock(nn.Module):
    """conv -> instance norm -> per-channel (scale, shift) from a style vector -> SiLU."""

    def __init__(self, cin: int, cout: int, style_dim: int, upsample: bool):
        super().__init__()
        self.upsample = upsample
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.affine = nn.Linear(style_dim, 2 * cout)
        nn.init.zeros_(self.affine.weight)
        nn.init.zeros_(self.affine.bias)

    def forward(self, x, w):
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.instance_norm(self.conv(x))
        gamma, beta = self.affine(w).chunk(2, dim=1)
        return F.silu(x * (1 + gamma[:, :, None, None]) + beta[:, :, None, None])


class StyleGenerator(nn.Module):
    """Style-conditioned convolutional generator: (B, M, D) latent stack -> (B, 3, H, W) in [0, 1]."""

    def __init__(self, size: int, n_styles: int, style_dim: int, width: float = 1.0):
        super().__init__()
        self.size, self.n_styles, self.style_dim = size, n_styles, style_dim
        ch = lambda r: max(4, int(round(_CHANNELS[r] * width)))  # noqa: E731
        self.const = nn.Parameter(torch.randn(1, ch(4), 4, 4))
        # the first style also seeds the input map, giving the generator a per-sample spatial layout
        self.input_map = nn.Linear(style_dim, ch(4) * 16)
        blocks = [ModulatedBlock(ch(4), ch(4), style_dim, upsample=False)]
        res = 4
        for _ in range(n_upsamples(size)):
            blocks.append(ModulatedBlock(ch(res), ch(2 * res), style_dim, upsample=True))
            blocks.append(ModulatedBlock(ch(2 * res), ch(2 * res), style_dim, upsample=False))
            res *= 2
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(ch(size), 3, 1)
        n = len(blocks)
        self.style_index = [min(i * n_styles // n, n_styles - 1) for i in range(n)]

    def forward(self, ws):
        x = self.const + self.input_map(ws[:, 0]).view(ws.shape[0], -1, 4, 4)
        for block, k in zip(self.blocks, self.style_index):
            x = block(x, ws[:, k])
        return torch.sigmoid(self.to_rgb(x))


class ConvEncoder(nn.Module):
    """Image -> (B, M, D) latent stack.

    ``unit_rms`` rescales every style vector to unit root-mean-square. The
    generator is almost invariant to latent scale at initialization, so
    without it the scale of the codes is free to drift.
    """

    def __init__(self, size: int, n_styles: int, style_dim: int, width: int = 32, unit_rms: bool = False):
        super().__init__()
        self.n_styles, self.style_dim, self.unit_rms = n_styles, style_dim, unit_rms
        layers, cin, c = [], 3, width
        res = size
        layers += [nn.Conv2d(3, c, 3, padding=1), nn.SiLU()]
        cin = c
        while res > 4:
            cout = min(4 * width, cin * 2)
            layers += [nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.SiLU()]
            cin, res = cout, res // 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.Flatten(), nn.Linear(cin * 16, 256), nn.SiLU(), nn.Linear(256, n_styles * style_dim))

    def forward(self, x):
        w = self.head(self.features(x)).view(-1, self.n_styles, self.style_dim)
        if self.unit_rms:
            w = w * torch.rsqrt(w.pow(2).mean(dim=2, keepdim=True) + 1e-8)
        return w


class FeatureExtractor(nn.Module):
    """Frozen random-filter pyramid: 4 stride-2 stages with orthogonal filters.

    Stand-in for a pretrained perceptual network. Filters are orthogonal with
    unit gain, so every stage is 1-Lipschitz up to the activation.
    """

    def __init__(self, seed: int = 0, channels=(16, 32, 64, 64)):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.seed = seed
        convs, cin = [], 3
        for c in channels:
            conv = nn.Conv2d(cin, c, 3, stride=2, padding=1)
            w = torch.empty(c, cin * 9)
            _orthogonal_(w, g)
            conv.weight.data.copy_(w.view(c, cin, 3, 3))
            conv.bias.data.zero_()
            convs.append(conv)
            cin = c
        self.convs = nn.ModuleList(convs)
        self.requires_grad_(False)
        self.eval()

    def stages(self, x):
        feats = []
        x = 2.0 * x - 1.0
        for conv in self.convs:
            x = F.silu(conv(x))
            feats.append(x)
        return feats

    def forward(self, x):
        """Concatenated per-stage features, each stage scaled by 1/sqrt(its size)."""
        return torch.cat([f.flatten(1) / math.sqrt(f[0].numel()) for f in self.stages(x)], dim=1)

    def pooled(self, x):
        return torch.cat([f.mean(dim=(2, 3)) for f in self.stages(x)], dim=1)


def _orthogonal_(w: torch.Tensor, g: torch.Generator) -> None:
    rows, cols = w.shape
    a = torch.randn(max(rows, cols), min(rows, cols), generator=g)
    q, r = torch.linalg.qr(a)
    q = q * torch.sign(torch.diagonal(r))
    w.copy_(q if rows >= cols else q.T)


class IdentityEmbedder(nn.Module):
    """Image -> unit-norm embedding."""

    def __init__(self, dim: int = 64, width: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * width, 2 * width, 3, stride=2, padding=1), nn.SiLU(),
            nn.AdaptiveAvgPool2d(4), nn.Flatten(),
            nn.Linear(2 * width * 16, 128), nn.SiLU(), nn.Linear(128, dim),
        )

    def forward(self, x):
        return F.normalize(self.net(x), dim=1)


class SegNet(nn.Module):
    """Three-level U-Net producing per-pixel class logits."""

    def __init__(self, n_classes: int, width: int = 16):
        super().__init__()
        w = width
        conv = lambda cin, cout: nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.SiLU())  # noqa: E731
        self.enc1 = conv(3, w)
        self.enc2 = nn.Sequential(nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.SiLU(), conv(2 * w, 2 * w))
        self.enc3 = nn.Sequential(nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1), nn.SiLU(), conv(4 * w, 4 * w),
                                  nn.Conv2d(4 * w, 4 * w, 3, padding=2, dilation=2), nn.SiLU())
        self.dec2 = conv(6 * w, 2 * w)
        self.dec1 = nn.Sequential(conv(3 * w, w), nn.Conv2d(w, n_classes, 1))

    def forward(self, x):
        up = lambda t, ref: F.interpolate(t, size=ref.shape[-2:], mode="bilinear", align_corners=False)  # noqa: E731
        a = self.enc1(x)
        b = self.enc2(a)
        c = self.enc3(b)
        b = self.dec2(torch.cat([b, up(c, b)], dim=1))
        return self.dec1(torch.cat([a, up(b, a)], dim=1))


class Discriminator(nn.Module):
    """Image -> raw realness score (B,)."""

    def __init__(self, size: int, width: int = 32):
        super().__init__()
        layers, cin, res = [], 3, size
        c = width
        while res > 4:
            layers += [nn.Conv2d(cin, c, 3, stride=2, padding=1), nn.SiLU()]
            cin, c, res = c, min(c * 2, 4 * width), res // 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(cin * 16, 1)

    def forward(self, x):
        return self.head(self.features(2.0 * x - 1.0).flatten(1)).squeeze(1)


def freeze(module: nn.Module) -> nn.Module:
    module.requires_grad_(False)
    module.eval()
    return module
