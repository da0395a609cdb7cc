"""PNG contact sheets: one row per pipeline stage, one column per sample."""
from __future__ import annotations

import numpy as np

from .. import io


def contact_sheet(rows: list[np.ndarray], pad: int = 2, scale: int = 2) -> np.ndarray:
    """Tile equally sized (N, H, W, 3) image stacks into one uint8 image."""
    if not rows:
        raise ValueError("no rows")
    n = max(len(r) for r in rows)
    h, w = rows[0].shape[1:3]
    sheet = np.full((len(rows) * (h + pad) + pad, n * (w + pad) + pad, 3), 255, np.uint8)
    for i, r in enumerate(rows):
        r = io.to_uint8(r) if r.dtype != np.uint8 else r
        for j, img in enumerate(r):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            sheet[y:y + h, x:x + w] = img
    return sheet.repeat(scale, axis=0).repeat(scale, axis=1) if scale > 1 else sheet


def write_stage_sheet(path, entries, stages=("selfie", "stylized", "imitated", "converted"), n: int = 12) -> None:
    rows = [np.stack([getattr(e, s) for e in entries[:n]]) for s in stages]
    io.write_png(path, contact_sheet(rows))
