"""
Full-reference image quality metrics and the per-image MetricReport

PSNR over [0, 1] intensities (capped for identical images), SSIM in its
standard Gaussian-window form, and cumulative error distribution curves.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from skimage.metrics import structural_similarity

from ..core.errors import ArityError, ConfigurationError
from ..core.imaging import CHANNEL_NAMES, ImageTensor
from ..utils.records import dump_json, load_json
from .bright import BrightChannelConfig, bright_channel_histogram, count_bright_pixels

PathLike = Union[str, Path]

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
CED_BINS = 256
METRIC_NAMES = ("psnr", "ssim", "ced", "bcp")


def _check_same_shape(a: ImageTensor, b: ImageTensor) -> None:
    if a.shape != b.shape:
        raise ArityError(f"images differ in shape: {a.shape} vs {b.shape}")


def psnr(a: ImageTensor, b: ImageTensor, cap: float = PSNR_CAP) -> float:
    _check_same_shape(a, b)
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def ssim(a: ImageTensor, b: ImageTensor) -> float:
    _check_same_shape(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise ConfigurationError(
            f"SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {a.height}×{a.width}"
        )
    return float(
        structural_similarity(
            a.data,
            b.data,
            data_range=1.0,
            channel_axis=2,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=SSIM_K1,
            K2=SSIM_K2,
        )
    )


@dataclass(frozen=True)
class CedCurve:
    channel: str
    curve: np.ndarray  # cumulative fraction per bin, ends at 1.0
    mean: float
    variance: float

    @property
    def bin_edges(self) -> np.ndarray:
        """Upper edge of every bin."""
        return np.arange(1, len(self.curve) + 1) / len(self.curve)


def ced(a: ImageTensor, b: ImageTensor, bins: int = CED_BINS) -> List[CedCurve]:
    _check_same_shape(a, b)
    curves = []
    for c in range(a.channels):
        errors = np.abs(a.data[:, :, c] - b.data[:, :, c]).ravel()
        counts, _ = np.histogram(errors, bins=bins, range=(0.0, 1.0))
        cumulative = np.cumsum(counts) / errors.size
        name = CHANNEL_NAMES[c] if a.channels == 3 else "L"
        curves.append(CedCurve(name, cumulative, float(errors.mean()), float(errors.var())))
    return curves


def export_ced(curves: Sequence[CedCurve], out_dir: PathLike, image_id: str) -> List[Path]:
    """One two-column text file per channel: bin upper edge, cumulative fraction."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for curve in curves:
        path = out_dir / f"{image_id}_ced_{curve.channel}.txt"
        np.savetxt(
            path,
            np.column_stack([curve.bin_edges, curve.curve]),
            fmt="%.8f",
            header=f"abs_error cumulative_fraction  mean={curve.mean:.8g} variance={curve.variance:.8g}",
        )
        paths.append(path)
    return paths


@dataclass(frozen=True)
class MetricSettings:
    metrics: tuple = METRIC_NAMES
    psnr_cap: float = PSNR_CAP
    ced_bins: int = CED_BINS
    bright: BrightChannelConfig = field(default_factory=BrightChannelConfig)

    def __post_init__(self) -> None:
        unknown = set(self.metrics) - set(METRIC_NAMES)
        if unknown:
            raise ConfigurationError(
                f"unknown metric(s) {', '.join(sorted(unknown))} (choices: {', '.join(METRIC_NAMES)})"
            )
        object.__setattr__(self, "metrics", tuple(m for m in METRIC_NAMES if m in self.metrics))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metrics": list(self.metrics),
            "psnr_cap": self.psnr_cap,
            "ssim": {"window": SSIM_WINDOW, "sigma": SSIM_SIGMA, "K1": SSIM_K1, "K2": SSIM_K2},
            "ced_bins": self.ced_bins,
            "bright_channel": self.bright.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricSettings":
        """Inverse of to_dict; the fixed SSIM constants are ignored."""
        return cls(
            metrics=tuple(data.get("metrics", METRIC_NAMES)),
            psnr_cap=data.get("psnr_cap", PSNR_CAP),
            ced_bins=data.get("ced_bins", CED_BINS),
            bright=BrightChannelConfig.from_dict(data.get("bright_channel", {})),
        )


@dataclass
class MetricRow:
    image_id: str
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    ced: Optional[Dict[str, Dict[str, float]]] = None
    bright_pixel_count: Optional[int] = None
    bright_histogram: Optional[List[float]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}


def evaluate_pair(
    image_id: str,
    estimate: ImageTensor,
    truth: ImageTensor,
    settings: MetricSettings = MetricSettings(),
    curves_out: Optional[PathLike] = None,
) -> MetricRow:
    _check_same_shape(estimate, truth)
    row = MetricRow(image_id=image_id)
    if "psnr" in settings.metrics:
        row.psnr = psnr(estimate, truth, cap=settings.psnr_cap)
    if "ssim" in settings.metrics:
        row.ssim = ssim(estimate, truth)
    if "ced" in settings.metrics:
        curves = ced(estimate, truth, bins=settings.ced_bins)
        row.ced = {c.channel: {"mean": c.mean, "variance": c.variance} for c in curves}
        if curves_out is not None:
            export_ced(curves, curves_out, image_id)
    if "bcp" in settings.metrics and estimate.channels == 3:
        row.bright_pixel_count = count_bright_pixels(estimate, settings.bright)
        row.bright_histogram = bright_channel_histogram(estimate, settings.bright).tolist()
    return row


@dataclass
class MetricReport:
    rows: List[MetricRow] = field(default_factory=list)
    settings: Dict[str, Any] = field(default_factory=dict)

    def aggregate(self) -> Dict[str, float]:
        """Mean of every scalar metric over the rows that carry it."""
        columns: Dict[str, List[float]] = {}
        for row in self.rows:
            for key in ("psnr", "ssim", "bright_pixel_count"):
                value = getattr(row, key)
                if value is not None:
                    columns.setdefault(key, []).append(float(value))
            for channel, stats in (row.ced or {}).items():
                columns.setdefault(f"ced_mean_{channel}", []).append(stats["mean"])
                columns.setdefault(f"ced_variance_{channel}", []).append(stats["variance"])
        return {key: float(np.mean(values)) for key, values in columns.items()}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "settings": self.settings,
            "count": len(self.rows),
            "rows": [row.to_dict() for row in self.rows],
            "aggregate": self.aggregate(),
        }

    def save(self, path: PathLike) -> Path:
        return dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path: PathLike) -> "MetricReport":
        data = load_json(path)
        return cls(
            rows=[MetricRow(**row) for row in data.get("rows", [])],
            settings=data.get("settings", {}),
        )


def build_report(rows: Iterable[MetricRow], settings: MetricSettings) -> MetricReport:
    return MetricReport(rows=list(rows), settings=settings.to_dict())
