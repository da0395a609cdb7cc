"""Rasterization kernels for the procedural engine.

Two interchangeable implementations share one contract: a numba kernel that
walks subsamples and tests primitives front-to-back, and a numpy version that
paints whole-grid masks back-to-front. Both return the index of the topmost
primitive covering each subsample (``-1`` for background).
"""
from __future__ import annotations

import numpy as np

from .._accel import NUMBA_AVAILABLE, njit

# primitive kinds
ELLIPSE = 0
SUPERELLIPSE = 1
POLYGON = 2
STROKE = 3
ELLIPSE_RING = 4
RECT_RING = 5
RECT = 6

# clip modes, relative to the face superellipse and a curve y = a + b*x^2 + c*x
CLIP_NONE = 0
CLIP_EXCLUDE_FACE_BELOW = 1
CLIP_FACE_BELOW = 2

N_PARAMS = 8
# layer id of output pixels whose subsamples come from different layers
MIXED = -2


# ---------------------------------------------------------------------------
# numba path


@njit(cache=True)
def _inside_face(x, y, face):
    fx = abs((x - face[0]) / face[2])
    fy = abs((y - face[1]) / face[3])
    return fx ** face[4] + fy ** face[4] <= 1.0


@njit(cache=True)
def _seg_dist2(px, py, ax, ay, bx, by):
    vx = bx - ax
    vy = by - ay
    wx = px - ax
    wy = py - ay
    ll = vx * vx + vy * vy
    t = 0.0
    if ll > 0.0:
        t = (wx * vx + wy * vy) / ll
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    dx = wx - t * vx
    dy = wy - t * vy
    return dx * dx + dy * dy


@njit(cache=True)
def _covers(kind, p, clip, cp, pts, face, x, y):
    hit = False
    if kind == ELLIPSE or kind == ELLIPSE_RING:
        c = np.cos(p[4])
        s = np.sin(p[4])
        dx = x - p[0]
        dy = y - p[1]
        u = c * dx + s * dy
        v = -s * dx + c * dy
        if kind == ELLIPSE:
            hit = (u / p[2]) ** 2 + (v / p[3]) ** 2 <= 1.0
        else:
            h = 0.5 * p[5]
            outer = (u / (p[2] + h)) ** 2 + (v / (p[3] + h)) ** 2 <= 1.0
            inner = (u / (p[2] - h)) ** 2 + (v / (p[3] - h)) ** 2 < 1.0
            hit = outer and not inner
    elif kind == SUPERELLIPSE:
        hit = abs((x - p[0]) / p[2]) ** p[4] + abs((y - p[1]) / p[3]) ** p[4] <= 1.0
    elif kind == POLYGON:
        off = int(p[0])
        n = int(p[1])
        j = off + n - 1
        for i in range(off, off + n):
            yi = pts[i, 1]
            yj = pts[j, 1]
            if (yi > y) != (yj > y):
                xi = pts[i, 0]
                xj = pts[j, 0]
                if x < (xj - xi) * (y - yi) / (yj - yi) + xi:
                    hit = not hit
            j = i
    elif kind == STROKE:
        off = int(p[0])
        n = int(p[1])
        r2 = p[2] * p[2]
        for i in range(off, off + n - 1):
            if _seg_dist2(x, y, pts[i, 0], pts[i, 1], pts[i + 1, 0], pts[i + 1, 1]) <= r2:
                hit = True
                break
    elif kind == RECT_RING or kind == RECT:
        ax = abs(x - p[0])
        ay = abs(y - p[1])
        if kind == RECT:
            hit = ax <= p[2] and ay <= p[3]
        else:
            h = 0.5 * p[4]
            outer = ax <= p[2] + h and ay <= p[3] + h
            inner = ax < p[2] - h and ay < p[3] - h
            hit = outer and not inner
    if not hit or clip == CLIP_NONE:
        return hit
    below = y > cp[0] + cp[1] * x * x + cp[2] * x
    in_face = _inside_face(x, y, face)
    if clip == CLIP_EXCLUDE_FACE_BELOW:
        return not (in_face and below)
    return in_face and below


@njit(cache=True)
def _rasterize_numba(width, height, ss, inv_affine, face, kinds, params, clips, clip_params, pts, bbox):
    ws = width * ss
    hs = height * ss
    out = np.full((hs, ws), -1, dtype=np.int32)
    n_prim = kinds.shape[0]
    for r in range(hs):
        yi = (r + 0.5) / ws
        for col in range(ws):
            xi = (col + 0.5) / ws
            x = inv_affine[0] * xi + inv_affine[1] * yi + inv_affine[2]
            y = inv_affine[3] * xi + inv_affine[4] * yi + inv_affine[5]
            for k in range(n_prim - 1, -1, -1):
                if x < bbox[k, 0] or x > bbox[k, 2] or y < bbox[k, 1] or y > bbox[k, 3]:
                    continue
                if _covers(kinds[k], params[k], clips[k], clip_params[k], pts, face, x, y):
                    out[r, col] = k
                    break
    return out


@njit(cache=True)
def _resolve_numba(top, ss, colors, labels, groups, background, bg_label):
    hs, ws = top.shape
    h = hs // ss
    w = ws // ss
    image = np.zeros((h, w, 3), dtype=np.float64)
    seg = np.zeros((h, w), dtype=np.int64)
    layer = np.full((h, w), MIXED, dtype=np.int64)
    n_lab = 64
    counts = np.zeros(n_lab, dtype=np.int64)
    best_top = np.zeros(n_lab, dtype=np.int64)
    inv = 1.0 / (ss * ss)
    for i in range(h):
        for j in range(w):
            counts[:] = 0
            best_top[:] = -2
            g0 = -3
            pure = True
            for a in range(ss):
                for b in range(ss):
                    r = i * ss + a
                    c = j * ss + b
                    k = top[r, c]
                    if k < 0:
                        lab = bg_label
                        g = -1
                        for ch in range(3):
                            image[i, j, ch] += background[r, c, ch] * inv
                    else:
                        lab = labels[k]
                        g = groups[k]
                        for ch in range(3):
                            image[i, j, ch] += colors[k, ch] * inv
                    counts[lab] += 1
                    if k > best_top[lab]:
                        best_top[lab] = k
                    if g0 == -3:
                        g0 = g
                    elif g != g0:
                        pure = False
            best = -1
            for lab in range(n_lab):
                if counts[lab] == 0:
                    continue
                if best < 0 or counts[lab] > counts[best] or (
                    counts[lab] == counts[best] and best_top[lab] > best_top[best]
                ):
                    best = lab
            seg[i, j] = best
            if pure:
                layer[i, j] = g0
    return image, seg, layer


# ---------------------------------------------------------------------------
# numpy path


def _covers_np(kind, p, clip, cp, pts, face, x, y):
    if kind in (ELLIPSE, ELLIPSE_RING):
        c, s = np.cos(p[4]), np.sin(p[4])
        dx, dy = x - p[0], y - p[1]
        u = c * dx + s * dy
        v = -s * dx + c * dy
        if kind == ELLIPSE:
            hit = (u / p[2]) ** 2 + (v / p[3]) ** 2 <= 1.0
        else:
            h = 0.5 * p[5]
            outer = (u / (p[2] + h)) ** 2 + (v / (p[3] + h)) ** 2 <= 1.0
            inner = (u / (p[2] - h)) ** 2 + (v / (p[3] - h)) ** 2 < 1.0
            hit = outer & ~inner
    elif kind == SUPERELLIPSE:
        hit = np.abs((x - p[0]) / p[2]) ** p[4] + np.abs((y - p[1]) / p[3]) ** p[4] <= 1.0
    elif kind == POLYGON:
        off, n = int(p[0]), int(p[1])
        poly = pts[off : off + n]
        hit = np.zeros(x.shape, dtype=bool)
        for i in range(n):
            xi, yi = poly[i]
            xj, yj = poly[i - 1]
            crosses = (yi > y) != (yj > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xcross = (xj - xi) * (y - yi) / (yj - yi) + xi
            hit ^= crosses & (x < xcross)
    elif kind == STROKE:
        off, n = int(p[0]), int(p[1])
        r2 = p[2] * p[2]
        hit = np.zeros(x.shape, dtype=bool)
        for i in range(off, off + n - 1):
            ax, ay = pts[i]
            bx, by = pts[i + 1]
            vx, vy = bx - ax, by - ay
            wx, wy = x - ax, y - ay
            ll = vx * vx + vy * vy
            t = np.clip((wx * vx + wy * vy) / ll, 0.0, 1.0) if ll > 0.0 else np.zeros_like(x)
            dx, dy = wx - t * vx, wy - t * vy
            hit |= dx * dx + dy * dy <= r2
    elif kind in (RECT, RECT_RING):
        ax, ay = np.abs(x - p[0]), np.abs(y - p[1])
        if kind == RECT:
            hit = (ax <= p[2]) & (ay <= p[3])
        else:
            h = 0.5 * p[4]
            outer = (ax <= p[2] + h) & (ay <= p[3] + h)
            inner = (ax < p[2] - h) & (ay < p[3] - h)
            hit = outer & ~inner
    else:
        raise ValueError(f"unknown primitive kind {kind}")
    if clip == CLIP_NONE:
        return hit
    below = y > cp[0] + cp[1] * x * x + cp[2] * x
    in_face = np.abs((x - face[0]) / face[2]) ** face[4] + np.abs((y - face[1]) / face[3]) ** face[4] <= 1.0
    if clip == CLIP_EXCLUDE_FACE_BELOW:
        return hit & ~(in_face & below)
    return hit & in_face & below


def _rasterize_numpy(width, height, ss, inv_affine, face, kinds, params, clips, clip_params, pts, bbox):
    ws, hs = width * ss, height * ss
    xi = (np.arange(ws) + 0.5) / ws
    yi = (np.arange(hs) + 0.5) / ws
    xi, yi = np.meshgrid(xi, yi)
    a = inv_affine
    x = a[0] * xi + a[1] * yi + a[2]
    y = a[3] * xi + a[4] * yi + a[5]
    out = np.full((hs, ws), -1, dtype=np.int32)
    for k in range(len(kinds)):
        x0, y0, x1, y1 = bbox[k]
        sel = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        mask = np.zeros(x.shape, dtype=bool)
        mask[sel] = _covers_np(int(kinds[k]), params[k], int(clips[k]), clip_params[k], pts, face, x[sel], y[sel])
        out[mask] = k
    return out


def _resolve_numpy(top, ss, colors, labels, groups, background, bg_label):
    hs, ws = top.shape
    h, w = hs // ss, ws // ss
    bg = top < 0
    safe = np.where(bg, 0, top)
    rgb = np.where(bg[..., None], background, colors[safe])

    lab = np.where(bg, bg_label, labels[safe]).reshape(h, ss, w, ss).transpose(0, 2, 1, 3).reshape(h, w, ss * ss)
    tops = top.reshape(h, ss, w, ss).transpose(0, 2, 1, 3).reshape(h, w, ss * ss).astype(np.int64)
    n_lab = 64
    onehot = lab[..., None] == np.arange(n_lab)
    counts = onehot.sum(axis=2)
    best_top = np.where(onehot, tops[..., None], -2).max(axis=2)
    # Most frequent label; ties go to the label owning the topmost primitive.
    score = counts * (1 << 32) + (best_top + 2)
    seg = np.argmax(np.where(counts > 0, score, -1), axis=2).astype(np.int64)

    grp = np.where(bg, -1, groups[safe]).reshape(h, ss, w, ss).transpose(0, 2, 1, 3).reshape(h, w, ss * ss)
    pure = np.all(grp == grp[..., :1], axis=2)
    layer = np.where(pure, grp[..., 0], MIXED).astype(np.int64)
    # Accumulate in the same order as the numba kernel so both paths match bitwise.
    acc = np.zeros((h, w, 3))
    inv = 1.0 / (ss * ss)
    rr = rgb.reshape(h, ss, w, ss, 3)
    for a in range(ss):
        for b in range(ss):
            acc += rr[:, a, :, b, :] * inv
    image = acc
    return image, seg, layer


def bounding_boxes(kinds, params, pts) -> np.ndarray:
    """Conservative (x0, y0, x1, y1) box per primitive, in the primitive's own coordinates."""
    out = np.empty((len(kinds), 4))
    for k, (kind, p) in enumerate(zip(kinds, params)):
        if kind in (ELLIPSE, ELLIPSE_RING):
            r = max(p[2], p[3]) + (0.5 * p[5] if kind == ELLIPSE_RING else 0.0)
            out[k] = p[0] - r, p[1] - r, p[0] + r, p[1] + r
        elif kind == SUPERELLIPSE:
            out[k] = p[0] - p[2], p[1] - p[3], p[0] + p[2], p[1] + p[3]
        elif kind in (POLYGON, STROKE):
            seg = pts[int(p[0]) : int(p[0]) + int(p[1])]
            pad = p[2] if kind == STROKE else 0.0
            out[k] = seg[:, 0].min() - pad, seg[:, 1].min() - pad, seg[:, 0].max() + pad, seg[:, 1].max() + pad
        else:
            h = 0.5 * p[4] if kind == RECT_RING else 0.0
            out[k] = p[0] - p[2] - h, p[1] - p[3] - h, p[0] + p[2] + h, p[1] + p[3] + h
    # one part in 1e9 of slack keeps boundary subsamples inside the box
    return out + np.array([-1e-9, -1e-9, 1e-9, 1e-9])


def rasterize(*args, backend: str | None = None):
    use_numba = NUMBA_AVAILABLE if backend is None else backend == "numba"
    return (_rasterize_numba if use_numba else _rasterize_numpy)(*args)


def resolve(*args, backend: str | None = None):
    use_numba = NUMBA_AVAILABLE if backend is None else backend == "numba"
    return (_resolve_numba if use_numba else _resolve_numpy)(*args)
