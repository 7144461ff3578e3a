"""
Rain streak synthesis and density labels

Rain is modelled additively per channel: rainy_c = clamp(clean_c + R_c), with
R_c built from anti-aliased line segments whose intensity is drawn separately
for each colour channel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import expit

from ..utils.seeding import numpy_rng
from .errors import ArityError, ConfigurationError
from .imaging import ImageTensor, clamp

Range = Tuple[float, float]

# Channel-distinct defaults: R streaks brightest, B faintest.
DEFAULT_INTENSITIES: Tuple[Range, Range, Range] = ((0.55, 0.85), (0.4, 0.7), (0.25, 0.55))


@dataclass(frozen=True)
class RainParams:
    streak_count: int = 60
    length_range: Range = (8.0, 24.0)
    angle_range: Range = (-20.0, 20.0)
    intensity_ranges: Tuple[Range, Range, Range] = DEFAULT_INTENSITIES
    thickness: float = 1.0
    blur_radius: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "length_range", _as_range(self.length_range))
        object.__setattr__(self, "angle_range", _as_range(self.angle_range))
        if len(self.intensity_ranges) != 3:
            raise ConfigurationError("intensity_ranges needs one (min, max) per channel")
        object.__setattr__(
            self, "intensity_ranges", tuple(_as_range(r) for r in self.intensity_ranges)
        )
        if self.streak_count < 0:
            raise ConfigurationError("streak_count must be non-negative")
        for name in ("length_range", "angle_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} has min > max")
        if self.length_range[0] < 0:
            raise ConfigurationError("streak lengths must be non-negative")
        for lo, hi in self.intensity_ranges:
            if lo > hi or lo < 0.0 or hi > 1.0:
                raise ConfigurationError(
                    f"intensity range ({lo}, {hi}) must satisfy 0 <= min <= max <= 1"
                )
        if self.thickness <= 0:
            raise ConfigurationError("thickness must be positive")
        if self.blur_radius < 0:
            raise ConfigurationError("blur_radius must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RainParams":
        return cls(**data)


def _as_range(value: Sequence[float]) -> Range:
    lo, hi = value
    return (float(lo), float(hi))


@dataclass(frozen=True)
class Streak:
    center_row: float
    center_col: float
    length: float
    angle: float  # degrees from vertical
    intensity: Tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))

    def endpoints(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        theta = math.radians(self.angle)
        half = self.length / 2.0
        dr, dc = half * math.cos(theta), half * math.sin(theta)
        return (
            (self.center_row - dr, self.center_col - dc),
            (self.center_row + dr, self.center_col + dc),
        )


def sample_streaks(
    params: RainParams, height: int, width: int, rng: np.random.Generator
) -> List[Streak]:
    streaks = []
    for _ in range(params.streak_count):
        row = rng.uniform(0.0, height)
        col = rng.uniform(0.0, width)
        length = rng.uniform(*params.length_range)
        angle = rng.uniform(*params.angle_range)
        intensity = tuple(float(rng.uniform(lo, hi)) for lo, hi in params.intensity_ranges)
        streaks.append(Streak(row, col, length, angle, intensity))
    return streaks


def segment_coverage(
    height: int, width: int, streak: Streak, thickness: float
) -> np.ndarray:
    """Anti-aliased coverage in [0, 1] of one segment over the pixel grid.

    coverage(p) = clip(thickness/2 + 1/2 - dist(p, segment), 0, 1), with pixel
    centres at integer (row, col) coordinates.
    """
    (r0, c0), (r1, c1) = streak.endpoints()
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    dr, dc = r1 - r0, c1 - c0
    seg_len2 = dr * dr + dc * dc
    if seg_len2 == 0.0:
        t = np.zeros_like(rows)
    else:
        t = np.clip(((rows - r0) * dr + (cols - c0) * dc) / seg_len2, 0.0, 1.0)
    dist = np.hypot(rows - (r0 + t * dr), cols - (c0 + t * dc))
    return np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0)


def render_streaks(
    height: int,
    width: int,
    streaks: Sequence[Streak],
    thickness: float = 1.0,
    blur_radius: float = 0.0,
) -> ImageTensor:
    """Rasterise streaks into a 3-channel rain layer (per-channel maximum)."""
    layer = np.zeros((height, width, 3))
    for streak in streaks:
        cover = segment_coverage(height, width, streak, thickness)
        for c in range(3):
            np.maximum(layer[:, :, c], cover * streak.intensity[c], out=layer[:, :, c])
    if blur_radius > 0:
        for c in range(3):
            layer[:, :, c] = gaussian_filter(layer[:, :, c], sigma=blur_radius, mode="nearest")
    return ImageTensor(np.clip(layer, 0.0, 1.0))


def synthesize_rain(
    clean: ImageTensor, params: RainParams
) -> Tuple[ImageTensor, ImageTensor]:
    """Return ``(rainy, rain_layer)`` with rainy = clamp(clean + rain_layer)."""
    if clean.channels != 3:
        raise ArityError(f"synthesize_rain needs an RGB image, got {clean.channels} channels")
    rng = numpy_rng(params.seed)
    streaks = sample_streaks(params, clean.height, clean.width, rng)
    rain_layer = render_streaks(
        clean.height, clean.width, streaks, params.thickness, params.blur_radius
    )
    rainy = clamp(ImageTensor(clean.data + rain_layer.data))
    return rainy, rain_layer


def density_ground_truth(
    clean: ImageTensor, rainy: ImageTensor
) -> Tuple[ImageTensor, ImageTensor, ImageTensor]:
    """Per-channel density labels: 0 where rainy == clean, sigmoid(rainy - clean) elsewhere."""
    if clean.shape != rainy.shape or clean.channels != 3:
        raise ArityError(
            f"density labels need two RGB images of equal shape, got {clean.shape} and {rainy.shape}"
        )
    residual = rainy.data - clean.data
    density = np.where(residual == 0.0, 0.0, expit(residual))
    return tuple(ImageTensor(density[:, :, c : c + 1]) for c in range(3))
