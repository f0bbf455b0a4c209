"""Canny edge detection on channel-major images.

Images are float arrays shaped (C, H, W) with C in {1, 3} and values in
[0, 1]; planes are (H, W). Borders are handled by half-sample symmetric
reflection throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import ParameterError

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class CannyParams:
    gaussian_sigma: float = 1.4
    low_threshold: float = 0.1
    high_threshold: float = 0.2
    soften_sigma: float | None = None  # optional post-blur producing soft masks

    def __post_init__(self):
        if not self.gaussian_sigma > 0:
            raise ParameterError(f"gaussian_sigma must be > 0, got {self.gaussian_sigma}")
        if not 0 <= self.low_threshold < self.high_threshold <= 1:
            raise ParameterError(
                "thresholds must satisfy 0 <= low < high <= 1, "
                f"got low={self.low_threshold}, high={self.high_threshold}")
        if self.soften_sigma is not None and not self.soften_sigma > 0:
            raise ParameterError(f"soften_sigma must be > 0, got {self.soften_sigma}")


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luminance plane of a 1- or 3-channel (C, H, W) image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image.copy()
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ParameterError(f"expected a 1- or 3-channel (C, H, W) image, got shape {image.shape}")
    if image.shape[0] == 1:
        return image[0].copy()
    return np.tensordot(LUMA, image, axes=(0, 0))


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _correlate_separable(plane: np.ndarray, k_rows: np.ndarray, k_cols: np.ndarray) -> np.ndarray:
    # scipy "reflect" is half-sample symmetric: (d c b a | a b c d | d c b a)
    out = ndimage.correlate1d(plane, k_rows, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k_cols, axis=1, mode="reflect")


def gaussian_blur(plane: np.ndarray, sigma: float) -> np.ndarray:
    """Blur with a normalised Gaussian of radius ``ceil(3 * sigma)``."""
    k = gaussian_kernel1d(sigma)
    return _correlate_separable(np.asarray(plane, dtype=np.float64), k, k)


def sobel_gradients(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel gradient magnitude (normalised to max 1) and orientation in radians.

    Orientation is ``atan2(gy, gx)`` with x to the right and y downwards.
    """
    plane = np.asarray(plane, dtype=np.float64)
    smooth = np.array([1.0, 2.0, 1.0])
    diff = np.array([-1.0, 0.0, 1.0])
    gx = _correlate_separable(plane, smooth, diff)
    gy = _correlate_separable(plane, diff, smooth)
    mag = np.hypot(gx, gy)
    peak = mag.max() if mag.size else 0.0
    if peak > 0:
        mag = mag / peak
    return mag, np.arctan2(gy, gx)


def non_maximum_suppression(magnitude: np.ndarray, orientation: np.ndarray) -> np.ndarray:
    """Keep pixels that are maximal along their gradient direction (4 bins)."""
    h, w = magnitude.shape
    padded = np.pad(magnitude, 1)
    angle = np.rad2deg(orientation) % 180.0
    # bin 0: horizontal gradient, 1: 45 deg, 2: vertical, 3: 135 deg
    bins = (((angle + 22.5) // 45.0) % 4).astype(int)
    # (dy, dx) neighbour offsets along the gradient for each bin
    offsets = [(0, 1), (1, 1), (1, 0), (1, -1)]
    keep = np.zeros_like(magnitude, dtype=bool)
    centre = padded[1:h + 1, 1:w + 1]
    tol = 1e-9
    for b, (dy, dx) in enumerate(offsets):
        fwd = padded[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx]
        bwd = padded[1 - dy:h + 1 - dy, 1 - dx:w + 1 - dx]
        # asymmetric comparison so two-pixel plateaus keep exactly one pixel;
        # tol absorbs rounding noise between mirror-image magnitudes
        sel = (bins == b) & (centre >= fwd - tol) & (centre > bwd + tol)
        keep |= sel
    return np.where(keep & (magnitude > 0), magnitude, 0.0)


_EIGHT = np.ones((3, 3), dtype=bool)


def hysteresis(strength: np.ndarray, low: float, high: float) -> np.ndarray:
    """Binary map of weak pixels (> low) 8-connected to a strong pixel (>= high)."""
    weak = strength > low
    strong = strength >= high
    labels, count = ndimage.label(weak, structure=_EIGHT)
    if count == 0:
        return np.zeros(strength.shape)
    keep = np.zeros(count + 1, dtype=bool)
    keep[np.unique(labels[strong & weak])] = True
    keep[0] = False
    return keep[labels].astype(np.float64)


def canny(image: np.ndarray, params: CannyParams | None = None) -> np.ndarray:
    """Edge map (H, W) of a (C, H, W) image; binary unless ``soften_sigma`` is set."""
    params = params or CannyParams()
    gray = to_grayscale(image)
    smoothed = gaussian_blur(gray, params.gaussian_sigma)
    mag, theta = sobel_gradients(smoothed)
    thin = non_maximum_suppression(mag, theta)
    edges = hysteresis(thin, params.low_threshold, params.high_threshold)
    if params.soften_sigma is not None:
        edges = gaussian_blur(edges, params.soften_sigma)
        peak = edges.max()
        if peak > 0:
            edges = edges / peak
    return edges
