"""Synthetic "pseudo-selfies": engine renders with nuisance factors applied.

Pose and expression are applied geometrically inside the rasterizer, so the
selfie keeps an exact segmentation. Illumination, background and sensor noise
are applied on top of the composite.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..schema import StrictAvatarVector
from .render import Engine, Expression, Pose

N_BACKGROUNDS = 8

RANGES = {
    "rotation_deg": (-15.0, 15.0),
    "tx": (-0.05, 0.05),
    "ty": (-0.05, 0.05),
    "smile": (0.0, 1.0),
    "mouth_open": (0.0, 1.0),
    "brow_raise": (0.0, 1.0),
    "light_strength": (0.0, 0.35),
    "light_angle": (-np.pi, np.pi),
    "shadow_strength": (0.0, 0.45),
    "shadow_x": (0.0, 1.0),
    "shadow_y": (0.0, 1.0),
    "shadow_radius": (0.1, 0.35),
    "noise_sigma": (0.0, 0.05),
}


@dataclass(frozen=True)
class SelfieCorruption:
    rotation_deg: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    smile: float = 0.0
    mouth_open: float = 0.0
    brow_raise: float = 0.0
    light_strength: float = 0.0
    light_angle: float = 0.0
    shadow_strength: float = 0.0
    shadow_x: float = 0.5
    shadow_y: float = 0.5
    shadow_radius: float = 0.2
    background_id: int = -1  # -1 keeps the clean engine background
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        for name, (lo, hi) in RANGES.items():
            val = getattr(self, name)
            if not lo - 1e-12 <= val <= hi + 1e-12:
                raise ValueError(f"{name}={val} outside [{lo}, {hi}]")
        if not -1 <= self.background_id < N_BACKGROUNDS:
            raise ValueError(f"background_id must be in [-1, {N_BACKGROUNDS})")

    @property
    def pose(self) -> Pose:
        return Pose(np.deg2rad(self.rotation_deg), self.tx, self.ty)

    @property
    def expression(self) -> Expression:
        return Expression(self.smile, self.mouth_open, self.brow_raise)

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "SelfieCorruption":
        return cls(**rec)

    @classmethod
    def sample(cls, rng: np.random.Generator, magnitude: float = 1.0) -> "SelfieCorruption":
        """Random corruption; ``magnitude`` in [0, 1] shrinks every nuisance toward neutral."""
        m = float(magnitude)
        u = lambda name: rng.uniform(*RANGES[name])  # noqa: E731
        # expressions are sparse: roughly a third of selfies smile, fewer open the mouth
        smile = u("smile") if rng.random() < 0.4 else 0.0
        mouth_open = u("mouth_open") if rng.random() < 0.25 else 0.0
        return cls(
            rotation_deg=m * u("rotation_deg"),
            tx=m * u("tx"),
            ty=m * u("ty"),
            smile=m * smile,
            mouth_open=m * mouth_open,
            brow_raise=m * u("brow_raise"),
            light_strength=m * u("light_strength"),
            light_angle=u("light_angle"),
            shadow_strength=m * u("shadow_strength"),
            shadow_x=u("shadow_x"),
            shadow_y=u("shadow_y"),
            shadow_radius=u("shadow_radius"),
            background_id=int(rng.integers(N_BACKGROUNDS)) if m > 0 else -1,
            noise_sigma=m * u("noise_sigma"),
            noise_seed=int(rng.integers(1 << 31)),
        )


def background_texture(texture_id: int, size: int) -> np.ndarray:
    """Deterministic procedural background, (size, size, 3) in [0, 1]."""
    rng = np.random.default_rng(1000 + texture_id)
    yy, xx = np.mgrid[0:size, 0:size] / size
    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    kind = texture_id % 4
    if kind == 0:  # linear gradient
        t = (xx * np.cos(texture_id) + yy * np.sin(texture_id) + 1.0) / 2.0
    elif kind == 1:  # stripes
        t = 0.5 + 0.5 * np.sin(2 * np.pi * (4 + texture_id) * (xx + 0.3 * yy))
    elif kind == 2:  # checker
        k = 4 + texture_id // 2
        t = ((np.floor(xx * k) + np.floor(yy * k)) % 2).astype(float)
    else:  # blobs
        t = np.zeros_like(xx)
        for _ in range(5):
            cx, cy, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.1, 0.3)
            t += np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
        t = np.clip(t, 0.0, 1.0)
    return np.clip(c0 * (1 - t[..., None]) + c1 * t[..., None], 0.0, 1.0)


def apply_photometric(image: np.ndarray, c: SelfieCorruption) -> np.ndarray:
    """Illumination gradient, shadow blob and sensor noise, in that order."""
    n = image.shape[0]
    yy, xx = (np.mgrid[0:n, 0:n] + 0.5) / n
    out = image
    if c.light_strength > 0:
        ramp = (xx - 0.5) * np.cos(c.light_angle) + (yy - 0.5) * np.sin(c.light_angle)
        out = out * (1.0 + c.light_strength * 2.0 * ramp)[..., None]
    if c.shadow_strength > 0:
        d2 = (xx - c.shadow_x) ** 2 + (yy - c.shadow_y) ** 2
        out = out * (1.0 - c.shadow_strength * np.exp(-d2 / (2 * c.shadow_radius ** 2)))[..., None]
    if c.noise_sigma > 0:
        out = out + c.noise_sigma * np.random.default_rng(c.noise_seed).standard_normal(out.shape)
    return np.clip(out, 0.0, 1.0)


def synth_selfie(engine: Engine, v: StrictAvatarVector, c: SelfieCorruption) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(selfie image, exact segmentation of the selfie)``."""
    bg = None if c.background_id < 0 else background_texture(c.background_id, engine.size)
    out = engine.render(v, pose=c.pose, expression=c.expression, background=bg)
    return apply_photometric(out.image, c), out.segmentation
