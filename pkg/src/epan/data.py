"""Dataset construction: synthetic blur, box cleaning, alignment, splits.

Images are float arrays shaped (C, H, W) with values in [0, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DataError, DimensionError, GeometryError, ParameterError
from .metrics import PSNR_CAP, psnr_from_mse

# ---------------------------------------------------------------------------
# synthetic blur
# ---------------------------------------------------------------------------


def _segment_length_in_cell(p0, p1, x0, x1, y0, y1) -> float:
    """Length of segment p0-p1 clipped to the box [x0, x1] x [y0, y1] (Liang-Barsky)."""
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, p0[0] - x0), (dx, x1 - p0[0]), (-dy, p0[1] - y0), (dy, y1 - p0[1])):
        if p == 0:
            if q < 0:
                return 0.0
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 >= t1:
            return 0.0
    return (t1 - t0) * math.hypot(dx, dy)


def make_linear_kernel(length: float, angle: float, size: int) -> np.ndarray:
    """Normalised ``size`` x ``size`` motion kernel for a straight trajectory.

    The trajectory is a segment of ``length`` pixels through the kernel centre
    at ``angle`` radians (counter-clockwise from the x axis). Each tap receives
    the length of the segment that crosses its unit cell, which anti-aliases
    oblique lines and gives exact box filters for axis-aligned ones.
    """
    if size < 1 or size % 2 == 0:
        raise ParameterError(f"kernel size must be a positive odd integer, got {size}")
    if not 0 < length <= size:
        raise ParameterError(f"length must be in (0, size={size}], got {length}")
    # the segment is symmetric about the centre, so theta and theta + pi coincide
    angle = math.fmod(angle, math.pi)
    if angle < 0:
        angle += math.pi
    half = length / 2.0
    ux, uy = math.cos(angle), -math.sin(angle)  # image rows grow downwards
    p0, p1 = (-half * ux, -half * uy), (half * ux, half * uy)
    r = size // 2
    kernel = np.zeros((size, size))
    for row in range(size):
        for col in range(size):
            cx, cy = col - r, row - r
            kernel[row, col] = _segment_length_in_cell(p0, p1, cx - 0.5, cx + 0.5, cy - 0.5, cy + 0.5)
    total = kernel.sum()
    if total <= 0:
        kernel[r, r] = 1.0
        total = 1.0
    return kernel / total


def _reflect_pad(plane: np.ndarray, ry: int, rx: int) -> np.ndarray:
    return np.pad(plane, ((ry, ry), (rx, rx)), mode="symmetric")


def blur_with_kernel(sharp: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve every channel with ``kernel`` using half-sample symmetric borders.

    The image mean is preserved exactly when the kernel is mirror-symmetric
    about both axes (horizontal or vertical motion, boxes, Gaussians). Oblique
    kernels drift the mean slightly, by an amount confined to the border band.
    """
    sharp = np.asarray(sharp, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if sharp.ndim != 3:
        raise DimensionError(f"image must be (C, H, W), got shape {sharp.shape}")
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ParameterError(f"kernel extents must be odd, got {kernel.shape}")
    ry, rx = kh // 2, kw // 2
    _, h, w = sharp.shape
    if ry > h or rx > w:
        raise DimensionError(f"kernel {kernel.shape} larger than image {sharp.shape[1:]}")
    flipped = kernel[::-1, ::-1]
    out = np.empty_like(sharp)
    for ch in range(sharp.shape[0]):
        padded = _reflect_pad(sharp[ch], ry, rx)
        windows = sliding_window_view(padded, (kh, kw))
        out[ch] = np.einsum("ijkl,kl->ij", windows, flipped)
    return out


def blur_by_averaging(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Pixelwise mean of a short clip of sharp frames."""
    if len(frames) == 0:
        raise DataError("need at least one frame to average")
    stack = [np.asarray(f, dtype=np.float64) for f in frames]
    first = stack[0].shape
    for i, f in enumerate(stack):
        if f.shape != first:
            raise DimensionError(f"frame {i} has shape {f.shape}, expected {first}")
    return np.mean(stack, axis=0)


# ---------------------------------------------------------------------------
# detection boxes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int
    score: float = 1.0

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return float(self.w * self.h)

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def clamp(self, width: int, height: int) -> BoundingBox:
        x0, y0 = max(0, self.x), max(0, self.y)
        x1, y1 = min(width, self.x + self.w), min(height, self.y + self.h)
        if x1 <= x0 or y1 <= y0:
            raise GeometryError(f"box {self} lies outside the {width}x{height} image")
        return BoundingBox(x0, y0, x1 - x0, y1 - y0, self.score)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def nms(boxes: Sequence[BoundingBox], iou_threshold: float = 0.5) -> list[BoundingBox]:
    """Greedy non-maximum suppression; equal scores keep input order."""
    if not 0 < iou_threshold <= 1:
        raise ParameterError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[BoundingBox] = []
    for i in order:
        if all(iou(boxes[i], k) <= iou_threshold for k in kept):
            kept.append(boxes[i])
    return kept


def box_importance(box: BoundingBox, image_w: int, image_h: int, area_cap: float = 0.25) -> float:
    """score x centrality x relative area.

    Centrality is 1 at the image centre and 0 at a corner; relative area is
    box area over image area divided by ``area_cap`` and clipped to 1.
    """
    cx, cy = box.center
    dist = math.hypot(cx - image_w / 2.0, cy - image_h / 2.0)
    centrality = max(0.0, 1.0 - dist / math.hypot(image_w / 2.0, image_h / 2.0))
    rel_area = min(1.0, box.area / (image_w * image_h) / area_cap)
    return box.score * centrality * rel_area


def importance_filter(boxes: Iterable[BoundingBox], image_w: int, image_h: int,
                      min_importance: float = 0.1, area_cap: float = 0.25) -> list[BoundingBox]:
    """Drop boxes whose importance is below ``min_importance`` (or exactly zero)."""
    kept = []
    for b in boxes:
        score = box_importance(b, image_w, image_h, area_cap)
        if score > 0 and score >= min_importance:
            kept.append(b)
    return kept


# ---------------------------------------------------------------------------
# sliding-window alignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentResult:
    offset_x: int
    offset_y: int
    psnr: float

    def window(self, init_box: BoundingBox) -> BoundingBox:
        return BoundingBox(init_box.x + self.offset_x, init_box.y + self.offset_y,
                           init_box.w, init_box.h, init_box.score)


def search_area(init_box: BoundingBox, image_w: int, image_h: int) -> tuple[int, int, int, int]:
    """(x0, y0, x1, y1) of the box doubled about its centre, clipped to the image."""
    x0 = init_box.x - init_box.w // 2
    y0 = init_box.y - init_box.h // 2
    x1, y1 = x0 + 2 * init_box.w, y0 + 2 * init_box.h
    return max(0, x0), max(0, y0), min(image_w, x1), min(image_h, y1)


def window_mse_grid(template: np.ndarray, region: np.ndarray) -> np.ndarray:
    """MSE between ``template`` and every same-sized window of ``region`` (stride 1)."""
    c, th, tw = template.shape
    windows = sliding_window_view(region, (th, tw), axis=(1, 2))  # (C, gy, gx, th, tw)
    gy, gx = windows.shape[1:3]
    out = np.empty((gy, gx))
    for row in range(gy):
        diff = windows[:, row] - template[:, None]
        out[row] = np.mean(diff * diff, axis=(0, 2, 3))
    return out


def align_pair(sharp_crop: np.ndarray, blurry_full: np.ndarray, init_box: BoundingBox) -> AlignmentResult:
    """Find the window of ``blurry_full`` that best matches ``sharp_crop`` by PSNR.

    Every stride-1 position inside the doubled search area is scored. Ties go
    to the smallest L1 offset from ``init_box``, then to row-major order.
    """
    sharp_crop = np.asarray(sharp_crop, dtype=np.float64)
    blurry_full = np.asarray(blurry_full, dtype=np.float64)
    if sharp_crop.ndim != 3 or blurry_full.ndim != 3 or sharp_crop.shape[0] != blurry_full.shape[0]:
        raise DimensionError(f"expected (C, H, W) images with equal C, got {sharp_crop.shape} and {blurry_full.shape}")
    if sharp_crop.shape[1:] != (init_box.h, init_box.w):
        raise GeometryError(f"sharp crop {sharp_crop.shape[1:]} does not match box size {(init_box.h, init_box.w)}")
    _, img_h, img_w = blurry_full.shape
    x0, y0, x1, y1 = search_area(init_box, img_w, img_h)
    if x1 - x0 < init_box.w or y1 - y0 < init_box.h:
        raise GeometryError(
            f"search area {x1 - x0}x{y1 - y0} is smaller than the {init_box.w}x{init_box.h} window")
    mse = window_mse_grid(sharp_crop, blurry_full[:, y0:y1, x0:x1])
    scores = psnr_from_mse(mse, 1.0)
    best = scores.max()
    rows, cols = np.nonzero(scores == best)
    off_x = cols + x0 - init_box.x
    off_y = rows + y0 - init_box.y
    # np.nonzero is row-major already; a stable sort on L1 keeps that as the secondary key
    pick = np.argsort(np.abs(off_x) + np.abs(off_y), kind="stable")[0]
    return AlignmentResult(int(off_x[pick]), int(off_y[pick]), float(best))


def crop(image: np.ndarray, box: BoundingBox) -> np.ndarray:
    return np.asarray(image)[:, box.y:box.y + box.h, box.x:box.x + box.w]


# ---------------------------------------------------------------------------
# manifests and splits
# ---------------------------------------------------------------------------

SPLITS = ("train", "test")


@dataclass
class ManifestRecord:
    sharp_path: str
    blurry_path: str
    scenario_id: str
    split: str | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        if not d["meta"]:
            del d["meta"]
        return json.dumps(d, sort_keys=True)


@dataclass
class DatasetManifest:
    records: list[ManifestRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def scenarios(self) -> list[str]:
        return sorted({r.scenario_id for r in self.records})

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def verify(self) -> None:
        """Raise :class:`DataError` unless every record is labelled and splits share no scenario."""
        seen: dict[str, str] = {}
        for r in self.records:
            if r.split not in SPLITS:
                raise DataError(f"record {r.sharp_path} has invalid split {r.split!r}")
            other = seen.setdefault(r.scenario_id, r.split)
            if other != r.split:
                raise DataError(f"scenario {r.scenario_id!r} appears in both train and test splits")

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")

    @classmethod
    def read(cls, path: str | Path) -> DatasetManifest:
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        records = []
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                records.append(ManifestRecord(**d))
            except (json.JSONDecodeError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed manifest record ({exc})") from exc
        return cls(records)


def split_by_scenario(manifest: DatasetManifest, train_scenarios: Iterable[str]) -> DatasetManifest:
    """Label records train/test by scenario; no scenario lands on both sides."""
    train = set(train_scenarios)
    known = set(manifest.scenarios)
    unknown = train - known
    if unknown:
        raise DataError(f"unknown scenario ids: {sorted(unknown)}")
    if not train:
        raise DataError("training scenario set is empty")
    if train == known:
        raise DataError("training scenarios must be a proper subset; no test scenario left")
    out = DatasetManifest([
        ManifestRecord(r.sharp_path, r.blurry_path, r.scenario_id,
                       "train" if r.scenario_id in train else "test", dict(r.meta))
        for r in manifest.records
    ])
    out.verify()
    return out


def random_train_scenarios(scenarios: Sequence[str], n_train: int, seed: int) -> list[str]:
    """Draw ``n_train`` scenarios uniformly at random (sorted for stable output)."""
    scenarios = sorted(scenarios)
    if not 0 < n_train < len(scenarios):
        raise DataError(f"need 0 < n_train < {len(scenarios)} scenarios, got {n_train}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(scenarios), size=n_train, replace=False)
    return sorted(scenarios[i] for i in picked)


def read_boxes(path: str | Path) -> dict[str, list[BoundingBox]]:
    """Boxes sidecar: one JSON object per line with image, x, y, w, h, score."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"boxes sidecar not found: {path}")
    out: dict[str, list[BoundingBox]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            box = BoundingBox(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]), float(d.get("score", 1.0)))
        except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}:{lineno}: malformed box record ({exc})") from exc
        out.setdefault(str(d["image"]), []).append(box)
    return out


__all__ = [
    "AlignmentResult", "BoundingBox", "DatasetManifest", "ManifestRecord", "PSNR_CAP",
    "align_pair", "blur_by_averaging", "blur_with_kernel", "box_importance", "crop",
    "importance_filter", "iou", "make_linear_kernel", "nms", "random_train_scenarios",
    "read_boxes", "search_area", "split_by_scenario", "window_mse_grid",
]
