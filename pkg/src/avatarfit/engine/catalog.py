"""Procedural asset catalog.

Geometry is expressed in face-normalized units: ``x`` in multiples of the face
half-width, ``y`` in multiples of the face half-height, origin at the face
center, y pointing down. Templates beyond the hand-designed ones (stress
schemas with many hair types, say) are generated from the catalog seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..schema import AttributeSchema


@dataclass(frozen=True)
class HairAsset:
    """Union of closed polygons, with the face window under ``hairline`` cut out."""

    polygons: tuple  # tuple of (K, 2) arrays
    hairline: tuple = (-0.6, 0.4, 0.0)  # a + b*x^2 + c*x


@dataclass(frozen=True)
class BrowAsset:
    points: np.ndarray  # right brow polyline, face-local image units relative to brow anchor
    half_width: float


@dataclass(frozen=True)
class AssetCatalog:
    hair: tuple
    beard: tuple  # beard style names
    brows: tuple
    glasses: tuple  # glasses style names
    skin_palette: np.ndarray
    eye_palette: np.ndarray
    hair_palette: np.ndarray
    seed: int = 0

    def sizes(self) -> dict:
        return {
            "hair_type": len(self.hair),
            "beard_type": len(self.beard),
            "brow_type": len(self.brows),
            "glasses_type": len(self.glasses),
            "skin_tone": len(self.skin_palette),
            "eye_color": len(self.eye_palette),
            "hair_color": len(self.hair_palette),
        }

    def check(self, schema: AttributeSchema) -> None:
        sizes = self.sizes()
        for a in schema.discrete:
            if sizes.get(a.name) != a.cardinality:
                raise ValueError(f"catalog has {sizes.get(a.name)} assets for {a.name}, schema wants {a.cardinality}")


# ---------------------------------------------------------------------------
# hair templates


def _long(top: float, side: float, bottom: float, neck: float = 0.5, chin: float = 0.95,
          wave_amp: float = 0.0) -> np.ndarray:
    t = np.linspace(0.0, np.pi, 40)
    arc = np.stack([(1.0 + side) * np.cos(t), -(1.0 + top) * np.sin(t)], 1)
    ys = np.linspace(0.0, bottom, 10)[1:]
    wig = wave_amp * np.sin(np.linspace(0.0, 4 * np.pi, 10)[1:])
    left = np.stack([-(1.0 + side) - wig, ys], 1)
    right = np.stack([(1.0 + side) + wig, ys], 1)[::-1]
    notch = np.array([[-neck, bottom], [-neck, chin], [neck, chin], [neck, bottom]])
    return np.concatenate([right, arc, left, notch])


def _circle(cx: float, cy: float, r: float, n: int = 24) -> np.ndarray:
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], 1)


def _base_hair() -> list:
    return [
        None,  # bald
        HairAsset((_cap(0.05, 0.04, -0.15),), (-0.72, 0.25, 0.0)),  # buzz
        HairAsset((_cap(0.16, 0.08, 0.05),), (-0.55, 0.45, 0.0)),  # short crop
        HairAsset((_cap(0.2, 0.1, 0.25),), (-0.45, 0.3, 0.3)),  # side part
        HairAsset((_cap(0.18, 0.1, 0.3),), (-0.3, 0.0, 0.0)),  # straight bangs
        HairAsset((_cap(0.22, 0.2, 0.85),), (-0.45, 0.45, 0.0)),  # bob
        HairAsset((_long(0.22, 0.16, 1.9),), (-0.52, 0.5, 0.0)),  # long straight
        HairAsset((_cap(0.5, 0.38, 0.55),), (-0.55, 0.45, 0.0)),  # afro
        HairAsset((np.array([[-0.16, -0.5], [-0.16, -1.5], [0.16, -1.5], [0.16, -0.5]]),), (-0.85, 0.0, 0.0)),  # mohawk
        HairAsset((_cap(0.1, 0.06, -0.05), _circle(0.0, -1.3, 0.32)), (-0.62, 0.35, 0.0)),  # top bun
        HairAsset((_cap(0.14, 0.08, 0.1, spikes=7, spike_amp=0.14),), (-0.5, 0.35, 0.0)),  # spiky
        HairAsset((_long(0.25, 0.25, 1.7, wave_amp=0.12),), (-0.4, 0.35, -0.2)),  # long wavy
    ]


def _cap(top: float, side: float, bottom: float, n: int = 40, spikes: int = 0, spike_amp: float = 0.0,
         wave_amp: float = 0.0) -> np.ndarray:
    """Enlarged upper half-ellipse that drops straight down to ``bottom``."""
    t = np.linspace(0.0, np.pi, n)
    r = 1.0 + spike_amp * np.abs(np.sin(spikes * t)) if spikes else np.ones_like(t)
    arc = np.stack([(1.0 + side) * np.cos(t) * r, -(1.0 + top) * np.sin(t) * r], 1)
    if bottom <= 0.0:
        return np.concatenate([[[1.0 + side, bottom]], arc, [[-(1.0 + side), bottom]]])
    ys = np.linspace(0.0, bottom, 6)[1:]
    wig = wave_amp * np.sin(np.linspace(0.0, 3 * np.pi, 6)[1:])
    right = np.stack([(1.0 + side) + wig, ys], 1)[::-1]
    left = np.stack([-(1.0 + side) - wig, ys], 1)
    return np.concatenate([right, arc, left])


def _random_hair(rng: np.random.Generator) -> HairAsset:
    top = rng.uniform(0.05, 0.45)
    side = rng.uniform(0.04, 0.35)
    if rng.random() < 0.3:
        poly = _long(top, side, rng.uniform(1.2, 1.9), wave_amp=rng.uniform(0.0, 0.12))
    else:
        poly = _cap(top, side, rng.uniform(-0.2, 0.9), spikes=int(rng.integers(0, 9)),
                    spike_amp=rng.uniform(0.0, 0.15))
    line = (rng.uniform(-0.75, -0.3), rng.uniform(0.0, 0.5), rng.uniform(-0.3, 0.3))
    return HairAsset((poly,), line)


# ---------------------------------------------------------------------------
# brows (image units, right brow, relative to the eye center)


def _base_brows() -> list:
    return [
        BrowAsset(np.array([[-0.06, -0.085], [0.06, -0.085]]), 0.011),  # thin straight
        BrowAsset(np.array([[-0.065, -0.09], [0.065, -0.09]]), 0.026),  # bold straight
        BrowAsset(np.array([[-0.07, -0.075], [-0.03, -0.108], [0.03, -0.11], [0.07, -0.08]]), 0.015),  # arched
        BrowAsset(np.array([[-0.07, -0.07], [0.06, -0.115]]), 0.017),  # angled
        BrowAsset(np.array([[-0.15, -0.066], [-0.05, -0.074], [0.075, -0.074]]), 0.02),  # heavy, meets at the bridge
    ]


def _resample(points: np.ndarray, n: int = 16) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    t = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
    u = np.linspace(0.0, 1.0, n)
    return np.stack([np.interp(u, t, points[:, 0]), np.interp(u, t, points[:, 1])], 1)


def _brow_gap(a: BrowAsset, b: BrowAsset) -> float:
    """Symmetric Hausdorff distance of the center lines plus the half-width difference."""
    pa, pb = _resample(a.points), _resample(b.points)
    d = np.linalg.norm(pa[:, None] - pb[None], axis=2)
    return max(d.min(axis=1).max(), d.min(axis=0).max()) + abs(a.half_width - b.half_width)


# below this gap two brows can differ on under 1% of a 64 px image
MIN_BROW_GAP = 0.022


def _random_brow(rng: np.random.Generator, existing: list) -> BrowAsset:
    while True:
        k = int(rng.integers(2, 5))
        xs = np.linspace(-0.07, 0.07, k)
        ys = -0.09 + rng.uniform(-0.02, 0.02, k)
        brow = BrowAsset(np.stack([xs, ys], 1), float(rng.uniform(0.01, 0.026)))
        if all(_brow_gap(brow, e) >= MIN_BROW_GAP for e in existing):
            return brow


BEARD_STYLES = ("none", "mustache", "goatee", "full", "chin_strap", "mutton_chops")
GLASSES_STYLES = ("none", "round", "square", "bold")

SKIN_PALETTE = np.array([
    [0.98, 0.87, 0.78],
    [0.94, 0.77, 0.63],
    [0.86, 0.66, 0.50],
    [0.74, 0.53, 0.37],
    [0.58, 0.40, 0.27],
    [0.40, 0.27, 0.18],
])
EYE_PALETTE = np.array([
    [0.40, 0.24, 0.10],  # brown
    [0.18, 0.45, 0.90],  # blue
    [0.15, 0.62, 0.28],  # green
    [0.56, 0.58, 0.62],  # gray
    [0.60, 0.28, 0.72],  # violet
])
HAIR_PALETTE = np.array([
    [0.07, 0.06, 0.06],  # black
    [0.30, 0.17, 0.09],  # dark brown
    [0.55, 0.35, 0.18],  # light brown
    [0.92, 0.80, 0.42],  # blond
    [0.78, 0.28, 0.10],  # red
    [0.62, 0.62, 0.64],  # gray
    [0.97, 0.95, 0.90],  # platinum
    [0.20, 0.33, 0.82],  # dyed blue
])


def _extend_palette(base: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if n <= len(base):
        return base[:n].copy()
    return np.concatenate([base, rng.uniform(0.05, 0.95, (n - len(base), 3))])


def _extend(base: list, n: int, make) -> tuple:
    """``make`` receives the assets chosen so far."""
    out = list(base[:n])
    while len(out) < n:
        out.append(make(out))
    return tuple(out)


def build_catalog(schema: AttributeSchema, seed: int = 0) -> AssetCatalog:
    """Catalog sized to ``schema``; the first assets of every list are fixed designs."""
    rng = np.random.default_rng(seed)
    card = {a.name: a.cardinality for a in schema.discrete}
    return AssetCatalog(
        hair=_extend(_base_hair(), card.get("hair_type", 12), lambda _: _random_hair(rng)),
        beard=_extend(list(BEARD_STYLES), card.get("beard_type", 6), lambda _: f"patch{int(rng.integers(1 << 16))}"),
        brows=_extend(_base_brows(), card.get("brow_type", 5), lambda out: _random_brow(rng, out)),
        glasses=_extend(list(GLASSES_STYLES), card.get("glasses_type", 4), lambda _: f"frame{int(rng.integers(1 << 16))}"),
        skin_palette=_extend_palette(SKIN_PALETTE, card.get("skin_tone", 6), rng),
        eye_palette=_extend_palette(EYE_PALETTE, card.get("eye_color", 5), rng),
        hair_palette=_extend_palette(HAIR_PALETTE, card.get("hair_color", 8), rng),
        seed=seed,
    )
