from __future__ import annotations

import numpy as np
from skimage.draw import disk, line

from .sketch import VectorSketch


def to_pixels(points: np.ndarray, height: int, width: int) -> np.ndarray:
    """Unit-square (x, y) to integer (row, col); y grows downward like the canvas."""
    cols = np.rint(np.clip(points[:, 0], 0, 1) * (width - 1)).astype(np.int64)
    rows = np.rint(np.clip(points[:, 1], 0, 1) * (height - 1)).astype(np.int64)
    return np.column_stack([rows, cols])


def rasterize(sk: VectorSketch, height: int = 64, width: int = 64, stroke_width: int = 1) -> np.ndarray:
    """Binary ink image (float32 in {0, 1}) with Bresenham segments between pen-down points."""
    img = np.zeros((height, width), dtype=np.float32)
    for stroke in sk.strokes:
        px = to_pixels(stroke, height, width)
        img[px[0, 0], px[0, 1]] = 1.0
        for (r0, c0), (r1, c1) in zip(px[:-1], px[1:]):
            rr, cc = line(r0, c0, r1, c1)
            img[rr, cc] = 1.0
    if stroke_width > 1:
        ink = np.argwhere(img > 0)
        radius = stroke_width / 2
        for r, c in ink:
            rr, cc = disk((r, c), radius, shape=img.shape)
            img[rr, cc] = 1.0
    return img
