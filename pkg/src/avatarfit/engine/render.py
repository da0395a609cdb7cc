"""Deterministic 2D avatar renderer.

Layers are composited in a fixed order (background, skin, beard, mouth,
eyes and brows, hair, glasses) at 2x supersampling and box-filtered down.
Segmentation labels come from the same coverage buffer, so they agree with
the composite by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..schema import AttributeSchema, RelaxedAvatarVector, StrictAvatarVector
from . import kernels as K
from .catalog import AssetCatalog, build_catalog

LABEL_NAMES = ("background", "skin", "hair", "eyes", "brows", "mouth", "glasses", "beard")
N_LABELS = len(LABEL_NAMES)


class Label(IntEnum):
    BACKGROUND = 0
    SKIN = 1
    HAIR = 2
    EYES = 3
    BROWS = 4
    MOUTH = 5
    GLASSES = 6
    BEARD = 7


class Layer(IntEnum):
    """Flat-colored layer groups; ``RenderOutput.layers`` reports them per pixel."""

    BACKGROUND = -1
    SKIN = 0
    NOSE = 1
    BEARD = 2
    MOUTH = 3
    MOUTH_OPEN = 4
    SCLERA = 5
    IRIS = 6
    PUPIL = 7
    BROWS = 8
    HAIR = 9
    GLASSES = 10


CLEAN_BACKGROUND = np.array([0.86, 0.90, 0.95])
FACE_CENTER = (0.5, 0.5)
LIP_COLOR = np.array([0.70, 0.22, 0.26])
MOUTH_OPEN_COLOR = np.array([0.30, 0.05, 0.08])
SCLERA_COLOR = np.array([0.97, 0.97, 0.97])
PUPIL_COLOR = np.array([0.05, 0.05, 0.06])
FRAME_COLOR = np.array([0.08, 0.08, 0.10])


@dataclass(frozen=True)
class Pose:
    rotation: float = 0.0  # radians, about the face center
    tx: float = 0.0  # fraction of image width
    ty: float = 0.0


@dataclass(frozen=True)
class Expression:
    smile: float = 0.0
    mouth_open: float = 0.0
    brow_raise: float = 0.0


def canonical_vector(schema: AttributeSchema) -> StrictAvatarVector:
    """Mid-range continuous values, short cropped hair, first asset everywhere else.

    Catalog distinguishability is defined on this face.
    """
    d = [0] * len(schema.discrete)
    if "hair_type" in schema.discrete_names:
        d[schema.discrete_index("hair_type")] = 2
    return StrictAvatarVector(schema, np.full(schema.n_continuous, 0.5), d)


NEUTRAL_POSE = Pose()
NEUTRAL_EXPRESSION = Expression()


@dataclass(frozen=True)
class RenderOutput:
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    segmentation: np.ndarray  # (H, W) int64 labels
    layers: np.ndarray  # (H, W) Layer id where all subsamples share one layer, else kernels.MIXED


@dataclass(frozen=True)
class FaceGeometry:
    """Continuous controls resolved into face-local image units."""

    rx: float
    ry: float
    exponent: float
    eye_x: float
    eye_y: float
    eye_scale: float
    eye_rotation: float
    mouth_half_width: float
    mouth_y: float
    nose_y: float


class _Builder:
    def __init__(self):
        self.kinds, self.params, self.clips, self.clip_params = [], [], [], []
        self.labels, self.groups, self.colors, self.pts = [], [], [], []
        self.n_pts = 0

    def add(self, kind, params, label, group, color, clip=K.CLIP_NONE, clip_params=(0.0, 0.0, 0.0)):
        p = np.zeros(K.N_PARAMS)
        p[: len(params)] = params
        self.kinds.append(kind)
        self.params.append(p)
        self.clips.append(clip)
        self.clip_params.append(clip_params)
        self.labels.append(int(label))
        self.groups.append(int(group))
        self.colors.append(np.asarray(color, dtype=np.float64))

    def add_points(self, kind, pts, extra, label, group, color, **kw):
        pts = np.asarray(pts, dtype=np.float64)
        self.pts.append(pts)
        self.add(kind, (self.n_pts, len(pts), *extra), label, group, color, **kw)
        self.n_pts += len(pts)

    def arrays(self):
        pts = np.concatenate(self.pts) if self.pts else np.zeros((1, 2))
        return (
            np.array(self.kinds, dtype=np.int64),
            np.array(self.params, dtype=np.float64).reshape(-1, K.N_PARAMS),
            np.array(self.clips, dtype=np.int64),
            np.array(self.clip_params, dtype=np.float64).reshape(-1, 3),
            np.ascontiguousarray(pts),
            np.array(self.labels, dtype=np.int64),
            np.array(self.groups, dtype=np.int64),
            np.array(self.colors, dtype=np.float64).reshape(-1, 3),
        )


_INSIDE_FACE = (-10.0, 0.0, 0.0)


class Engine:
    """Procedural renderer for strict avatar vectors."""

    def __init__(self, schema: AttributeSchema, catalog: AssetCatalog | None = None, size: int = 64,
                 supersample: int = 2, backend: str | None = None):
        self.schema = schema
        self.catalog = catalog if catalog is not None else build_catalog(schema)
        self.catalog.check(schema)
        self.size = int(size)
        self.supersample = int(supersample)
        self.backend = backend
        names = schema.discrete_names
        self._slot = {n: names.index(n) for n in names}
        self._cslot = {n: i for i, n in enumerate(schema.continuous_names)}

    # -- geometry -------------------------------------------------------------
    def _unit(self, v, name, default=0.5):
        i = self._cslot.get(name)
        return default if i is None else float(v.unit[i])

    def _index(self, v, name):
        i = self._slot.get(name)
        return 0 if i is None else v.discrete[i]

    def geometry(self, v: StrictAvatarVector) -> FaceGeometry:
        c = v.continuous
        get = lambda n, d: float(c[self._cslot[n]]) if n in self._cslot else d  # noqa: E731
        roundness = self._unit(v, "face_roundness")
        return FaceGeometry(
            rx=0.26 * get("head_width", 1.0),
            ry=0.31,
            exponent=2.0 + 1.5 * (1.0 - roundness),
            eye_x=0.1 * get("eye_spacing", 1.0),
            eye_y=-0.03,
            eye_scale=get("eye_size", 1.0),
            eye_rotation=get("eye_rotation", 0.0),
            mouth_half_width=0.085 * get("mouth_width", 1.0),
            mouth_y=0.14 + 0.05 * self._unit(v, "mouth_y"),
            nose_y=0.0 + 0.045 * self._unit(v, "nose_y"),
        )

    def landmarks(self, v: StrictAvatarVector, pose: Pose = NEUTRAL_POSE) -> np.ndarray:
        """Eye centers, nose tip and mouth center in image units (x, y)."""
        g = self.geometry(v)
        local = np.array([[g.eye_x, g.eye_y], [-g.eye_x, g.eye_y], [0.0, g.nose_y + 0.045], [0.0, g.mouth_y]])
        return self._forward(pose, local)

    @staticmethod
    def _forward(pose: Pose, local: np.ndarray) -> np.ndarray:
        c, s = np.cos(pose.rotation), np.sin(pose.rotation)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([FACE_CENTER[0] + pose.tx, FACE_CENTER[1] + pose.ty])

    @staticmethod
    def _inverse_affine(pose: Pose) -> np.ndarray:
        c, s = np.cos(pose.rotation), np.sin(pose.rotation)
        ox, oy = FACE_CENTER[0] + pose.tx, FACE_CENTER[1] + pose.ty
        # local = R(-theta) (p - o)
        return np.array([c, s, -(c * ox + s * oy), -s, c, -(-s * ox + c * oy)])

    def _build(self, v: StrictAvatarVector, expr: Expression) -> tuple:
        cat = self.catalog
        g = self.geometry(v)
        b = _Builder()
        skin = cat.skin_palette[self._index(v, "skin_tone")]
        hair_color = cat.hair_palette[self._index(v, "hair_color")]
        eye_color = cat.eye_palette[self._index(v, "eye_color")]
        face = np.array([0.0, 0.0, g.rx, g.ry, g.exponent])

        # skin
        b.add(K.RECT, (0.0, g.ry + 0.1, 0.085, 0.16), Label.SKIN, Layer.SKIN, skin)
        for sx in (-1.0, 1.0):
            b.add(K.ELLIPSE, (sx * g.rx * 0.97, 0.0, 0.035, 0.062, 0.0), Label.SKIN, Layer.SKIN, skin)
        b.add(K.SUPERELLIPSE, tuple(face), Label.SKIN, Layer.SKIN, skin)
        ny = g.nose_y
        b.add_points(K.STROKE, [[0.0, ny], [-0.012, ny + 0.04], [0.01, ny + 0.045]], (0.008,),
                     Label.SKIN, Layer.NOSE, skin * 0.75)

        # beard
        self._beard(b, cat.beard[self._index(v, "beard_type")], g, hair_color * 0.85)

        # mouth
        mw, my = g.mouth_half_width, g.mouth_y
        if expr.mouth_open > 0.0:
            b.add(K.ELLIPSE, (0.0, my + 0.012, mw * 0.75, 0.045 * expr.mouth_open + 1e-4, 0.0),
                  Label.MOUTH, Layer.MOUTH_OPEN, MOUTH_OPEN_COLOR)
        xs = np.linspace(-mw, mw, 7)
        ys = my - (0.006 + 0.045 * expr.smile) * (xs / mw) ** 2
        b.add_points(K.STROKE, np.stack([xs, ys], 1), (0.013,), Label.MOUTH, Layer.MOUTH, LIP_COLOR)

        # eyes and brows
        es = g.eye_scale
        brow = cat.brows[self._index(v, "brow_type")]
        lift = 0.03 * expr.brow_raise
        for sx in (1.0, -1.0):
            ex = sx * g.eye_x
            rot = sx * g.eye_rotation
            b.add(K.ELLIPSE, (ex, g.eye_y, 0.07 * es, 0.052 * es, rot), Label.EYES, Layer.SCLERA, SCLERA_COLOR)
            b.add(K.ELLIPSE, (ex, g.eye_y, 0.042 * es, 0.042 * es, 0.0), Label.EYES, Layer.IRIS, eye_color)
            b.add(K.ELLIPSE, (ex, g.eye_y, 0.013 * es, 0.013 * es, 0.0), Label.EYES, Layer.PUPIL, PUPIL_COLOR)
            pts = brow.points * [sx, 1.0] + [ex, g.eye_y - lift]
            b.add_points(K.STROKE, pts, (brow.half_width,), Label.BROWS, Layer.BROWS, hair_color * 0.8)

        # hair
        asset = cat.hair[self._index(v, "hair_type")]
        if asset is not None:
            ha, hb, hc = asset.hairline
            clip = (g.ry * ha, g.ry * hb / g.rx ** 2, g.ry * hc / g.rx)
            for poly in asset.polygons:
                b.add_points(K.POLYGON, poly * [g.rx, g.ry], (), Label.HAIR, Layer.HAIR, hair_color,
                             clip=K.CLIP_EXCLUDE_FACE_BELOW, clip_params=clip)

        # glasses
        self._glasses(b, cat.glasses[self._index(v, "glasses_type")], g)
        return face, b.arrays()

    def _beard(self, b: _Builder, style: str, g: FaceGeometry, color) -> None:
        my = g.mouth_y
        add = lambda *a, **k: b.add(*a, Label.BEARD, Layer.BEARD, color, **k)  # noqa: E731
        if style == "none":
            return
        if style == "mustache":
            pts = [[-0.11, my - 0.002], [-0.085, my - 0.055], [0.0, my - 0.072], [0.085, my - 0.055],
                   [0.11, my - 0.002], [0.0, my - 0.028]]
            b.add_points(K.POLYGON, pts, (), Label.BEARD, Layer.BEARD, color)
        elif style == "goatee":
            add(K.ELLIPSE, (0.0, my + 0.07, 0.05, 0.06, 0.0), clip=K.CLIP_FACE_BELOW, clip_params=_INSIDE_FACE)
        elif style == "full":
            add(K.RECT, (0.0, 0.2, 0.45, 0.3), clip=K.CLIP_FACE_BELOW, clip_params=(my - 0.055, -1.6, 0.0))
        elif style == "chin_strap":
            t = np.linspace(0.12 * np.pi, 0.88 * np.pi, 15)
            e = 2.0 / g.exponent
            pts = np.stack([g.rx * np.sign(np.cos(t)) * np.abs(np.cos(t)) ** e, g.ry * np.sin(t) ** e], 1)
            b.add_points(K.STROKE, pts, (0.022,), Label.BEARD, Layer.BEARD, color,
                         clip=K.CLIP_FACE_BELOW, clip_params=_INSIDE_FACE)
        elif style == "mutton_chops":
            for sx in (-1.0, 1.0):
                add(K.RECT, (sx * (g.rx - 0.04), 0.07, 0.06, 0.1), clip=K.CLIP_FACE_BELOW, clip_params=_INSIDE_FACE)
        else:  # generated patch styles
            r = np.random.default_rng(int(style[5:]))
            add(K.RECT, (r.uniform(-0.1, 0.1), my + r.uniform(-0.02, 0.1), r.uniform(0.03, 0.15),
                         r.uniform(0.02, 0.08)), clip=K.CLIP_FACE_BELOW, clip_params=_INSIDE_FACE)

    def _glasses(self, b: _Builder, style: str, g: FaceGeometry) -> None:
        if style == "none":
            return
        add = lambda *a, **k: b.add(*a, Label.GLASSES, Layer.GLASSES, FRAME_COLOR, **k)  # noqa: E731
        ey = g.eye_y
        if style == "round":
            hw, thick = 0.082, 0.016
        elif style == "square":
            hw, thick = 0.088, 0.016
        elif style == "bold":
            hw, thick = 0.095, 0.034
        else:
            r = np.random.default_rng(int(style[5:]))
            hw, thick = r.uniform(0.07, 0.1), r.uniform(0.012, 0.03)
        for sx in (-1.0, 1.0):
            ex = sx * g.eye_x
            if style == "round" or style.startswith("frame"):
                add(K.ELLIPSE_RING, (ex, ey, hw, hw * 0.92, 0.0, thick))
            else:
                add(K.RECT_RING, (ex, ey, hw, hw * 0.72, thick))
            b.add_points(K.STROKE, [[sx * (g.eye_x + hw), ey], [sx * g.rx * 0.98, ey - 0.012]], (0.007,),
                         Label.GLASSES, Layer.GLASSES, FRAME_COLOR)
        gap = max(g.eye_x - hw, 0.0)
        b.add_points(K.STROKE, [[-gap, ey - 0.005], [gap, ey - 0.005]], (0.5 * thick,),
                     Label.GLASSES, Layer.GLASSES, FRAME_COLOR)

    # -- rendering --------------------------------------------------------------
    def render(self, v: StrictAvatarVector, pose: Pose = NEUTRAL_POSE, expression: Expression = NEUTRAL_EXPRESSION,
               background: np.ndarray | None = None) -> RenderOutput:
        """Render ``v``; ``background`` is an (H, W, 3) image shown behind the avatar."""
        if isinstance(v, RelaxedAvatarVector):
            raise TypeError("the engine only renders strict avatar vectors")
        face, (kinds, params, clips, clip_params, pts, labels, groups, colors) = self._build(v, expression)
        n, ss = self.size, self.supersample
        bbox = K.bounding_boxes(kinds, params, pts)
        top = K.rasterize(n, n, ss, self._inverse_affine(pose), face, kinds, params, clips, clip_params, pts, bbox,
                          backend=self.backend)
        if background is None:
            bg = np.broadcast_to(CLEAN_BACKGROUND, (n * ss, n * ss, 3))
        else:
            bg = np.repeat(np.repeat(np.asarray(background, dtype=np.float64), ss, 0), ss, 1)
        image, seg, layer = K.resolve(top, ss, colors, labels, groups, np.ascontiguousarray(bg),
                                      int(Label.BACKGROUND), backend=self.backend)
        return RenderOutput(np.clip(image, 0.0, 1.0), seg, layer)

    def render_batch(self, vectors, **kw) -> tuple[np.ndarray, np.ndarray]:
        outs = [self.render(v, **kw) for v in vectors]
        return np.stack([o.image for o in outs]), np.stack([o.segmentation for o in outs])
