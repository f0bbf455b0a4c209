"""Run a trained network on whole images of arbitrary size."""

from __future__ import annotations

import numpy as np

from .edges import CannyParams, canny
from .tensor import no_grad


def pad_to_multiple(image: np.ndarray, divisor: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad (C, H, W) at the bottom/right so H and W divide ``divisor``."""
    _, h, w = image.shape
    ph, pw = (-h) % divisor, (-w) % divisor
    if ph or pw:
        image = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="symmetric")
    return image, (h, w)


def deblur(network, blurry: np.ndarray, canny_params: CannyParams | None = None,
           return_edges: bool = False):
    """Deblur one (C, H, W) image; the enhanced edge map is discarded unless asked for."""
    cfg = network.config
    blurry = np.asarray(blurry, dtype=np.float64)
    padded, (h, w) = pad_to_multiple(blurry, cfg.spatial_divisor)
    edges = None
    if cfg.has_een:
        # same order as training: detect on the full image, then pad alongside it
        edges = pad_to_multiple(canny(blurry, canny_params)[None], cfg.spatial_divisor)[0][None]
    with no_grad():
        out, edge_out = network.forward(padded[None].astype(network.dtype),
                                        None if edges is None else edges.astype(network.dtype))
    result = out.data[0, :, :h, :w].astype(np.float64)
    if return_edges:
        return result, None if edge_out is None else edge_out.data[0, 0, :h, :w].astype(np.float64)
    return result
