"""PSNR / SSIM and dataset-level evaluation reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .exceptions import DataError, DimensionError, ParameterError

PSNR_CAP = 99.0


def psnr_from_mse(mse, max_value: float = 1.0, cap: float = PSNR_CAP):
    """10*log10(max^2 / mse), clipped to ``cap`` (so zero error gives ``cap``)."""
    mse = np.asarray(mse, dtype=np.float64)
    with np.errstate(divide="ignore"):
        value = 10.0 * np.log10(max_value ** 2 / mse)
    value = np.minimum(value, cap)
    return float(value) if value.ndim == 0 else value


def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr needs equal shapes, got {a.shape} and {b.shape}")
    if not max_value > 0:
        raise ParameterError(f"max_value must be > 0, got {max_value}")
    return psnr_from_mse(np.mean((a - b) ** 2), max_value)


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.sigma <= 0 or self.k1 <= 0 or self.k2 <= 0 or self.dynamic_range <= 0:
            raise ParameterError(f"invalid SSIM parameters: {self}")

    def window(self) -> np.ndarray:
        x = np.arange(self.window_size) - (self.window_size - 1) / 2.0
        g = np.exp(-0.5 * (x / self.sigma) ** 2)
        g /= g.sum()
        return np.outer(g, g)


def _luminance(img: np.ndarray) -> np.ndarray:
    from .edges import to_grayscale

    img = np.asarray(img, dtype=np.float64)
    return img if img.ndim == 2 else to_grayscale(img)


def ssim_map(a: np.ndarray, b: np.ndarray, params: SsimParams | None = None) -> np.ndarray:
    """Per-window SSIM over every fully contained window position."""
    params = params or SsimParams()
    x, y = _luminance(a), _luminance(b)
    if x.shape != y.shape:
        raise DimensionError(f"ssim needs equal shapes, got {np.shape(a)} and {np.shape(b)}")
    ws = params.window_size
    if x.shape[0] < ws or x.shape[1] < ws:
        raise DimensionError(f"image {x.shape} is smaller than the {ws}x{ws} SSIM window")
    g = params.window()
    r = ws // 2
    # 'valid' region of a centred correlation
    sl = (slice(r, x.shape[0] - (ws - 1 - r)), slice(r, x.shape[1] - (ws - 1 - r)))

    def filt(z):
        return ndimage.correlate(z, g, mode="constant")[sl]

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, params: SsimParams | None = None) -> float:
    return float(np.mean(ssim_map(a, b, params)))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    names: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    label: str = ""

    @property
    def count(self) -> int:
        return len(self.psnr)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def add(self, name: str, psnr_value: float, ssim_value: float) -> None:
        self.names.append(name)
        self.psnr.append(float(psnr_value))
        self.ssim.append(float(ssim_value))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "count": self.count,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "images": [{"name": n, "psnr": p, "ssim": s} for n, p, s in zip(self.names, self.psnr, self.ssim)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        rep = cls(label=d.get("label", ""))
        for item in d["images"]:
            rep.add(item["name"], item["psnr"], item["ssim"])
        return rep


def format_table(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table, one row per report."""
    rows = [("model", "images", "PSNR", "SSIM")]
    rows += [(r.label or "-", str(r.count), f"{r.mean_psnr:.2f}", f"{r.mean_ssim:.3f}") for r in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = []
    for k, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_reports(reports: Sequence[EvalReport], json_path: str | Path) -> Path:
    """Write ``json_path`` (a JSON list, one object per row) plus a text table next to it; returns the table path."""
    json_path = Path(json_path)
    payload = [r.to_dict() for r in reports]
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    table_path = json_path.with_suffix(".txt")
    table_path.write_text(format_table(reports))
    return table_path


def evaluate(network, records, canny_params=None, *, label: str = "", prediction: str = "model",
             ssim_params: SsimParams | None = None) -> EvalReport:
    """Score a network on manifest records.

    ``prediction`` selects what is compared against the sharp image:
    ``"model"`` (the deblurred output), ``"blurry"`` (input baseline) or
    ``"sharp"`` (ground truth against itself, a sanity check).
    """
    from .io import read_image
    from .inference import deblur

    records = list(records)
    if not records:
        raise DataError("evaluation split is empty")
    missing = [p for r in records for p in (r.sharp_path, r.blurry_path) if not Path(p).exists()]
    if missing:
        raise FileNotFoundError("missing image files: " + ", ".join(missing))
    report = EvalReport(label=label)
    for r in records:
        sharp = read_image(r.sharp_path)
        blurry = read_image(r.blurry_path)
        if prediction == "model":
            pred = deblur(network, blurry, canny_params)
        elif prediction == "blurry":
            pred = blurry
        elif prediction == "sharp":
            pred = sharp
        else:
            raise ParameterError(f"unknown prediction source {prediction!r}")
        report.add(r.blurry_path, psnr(pred, sharp), ssim(pred, sharp, ssim_params))
    return report
