"""PNG and line-delimited JSON helpers.

Images live in memory as float64 (C, H, W) arrays in [0, 1]; on disk they
are 8-bit PNG (grayscale for one channel, RGB for three).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DataError

IMAGE_SUFFIXES = (".png",)


def read_image(path: str | Path, channels: int | None = None) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if channels == 1:
                im = im.convert("L")
            elif channels == 3 or im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        return arr[None]
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path: str | Path, image: np.ndarray) -> None:
    """Write a (C, H, W) or (H, W) image with C in {1, 3} as 8-bit PNG, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(image)
    if arr.ndim == 3:
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    Image.fromarray(to_uint8(arr)).save(path, format="PNG")


def list_images(directory: str | Path) -> list[Path]:
    """PNG files under ``directory`` (recursive), sorted by relative path."""
    directory = Path(directory)
    return sorted(p for p in directory.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def append_jsonl(path: str | Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
