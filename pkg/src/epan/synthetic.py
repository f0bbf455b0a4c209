"""Procedural sharp scenes for fixtures and smoke runs."""

from __future__ import annotations

import numpy as np


def random_scene(rng: np.random.Generator, height: int = 64, width: int = 64, n_shapes: int = 6) -> np.ndarray:
    """RGB (3, H, W) image of flat-coloured rectangles and discs on a smooth gradient."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = rng.uniform(0.2, 0.8, size=3)
    tilt = rng.uniform(-0.15, 0.15, size=(3, 2))
    img = base[:, None, None] + tilt[:, :1, None] * (yy / height - 0.5) + tilt[:, 1:, None] * (xx / width - 0.5)
    for _ in range(n_shapes):
        colour = rng.uniform(0.0, 1.0, size=3)
        if rng.random() < 0.5:
            h = rng.integers(height // 8, height // 2)
            w = rng.integers(width // 8, width // 2)
            y0 = rng.integers(0, height - h)
            x0 = rng.integers(0, width - w)
            mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            r = rng.uniform(min(height, width) / 12, min(height, width) / 4)
            cy, cx = rng.uniform(0, height), rng.uniform(0, width)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[:, mask] = colour[:, None]
    return np.clip(img, 0.0, 1.0)
