"""Input checks shared by the estimator API and the command line."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError, DimensionError


def check_image_batch(X, name: str = "X", channels: tuple[int, ...] | None = None) -> np.ndarray:
    """Return ``X`` as a float64 (N, C, H, W) array with values in [0, 1].

    Accepts a sequence of equally sized (C, H, W) images or a 4-D array.
    """
    try:
        arr = np.asarray(X, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{name} must be an array of images with equal shapes: {exc}") from exc
    if arr.ndim != 4:
        raise DimensionError(f"{name} must be shaped (N, C, H, W), got {arr.shape}")
    if arr.shape[0] == 0:
        raise DataError(f"{name} holds no images")
    if channels is not None and arr.shape[1] not in channels:
        raise DimensionError(f"{name} must have {' or '.join(map(str, channels))} channels, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or infinite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(f"{name} values must lie in [0, 1], got [{arr.min():.4g}, {arr.max():.4g}]")
    return arr


def check_paired_batches(X, y, channels: tuple[int, ...] | None = None) -> tuple[np.ndarray, np.ndarray]:
    X = check_image_batch(X, "X", channels)
    y = check_image_batch(y, "y", channels)
    if X.shape != y.shape:
        raise DimensionError(f"X {X.shape} and y {y.shape} must have identical shapes")
    return X, y


__all__ = ["check_image_batch", "check_paired_batches"]
