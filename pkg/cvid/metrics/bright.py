"""
Bright channel prior statistics

    J_bright(x) = max over y in Ω(x) of max over c of J_c(y)

Ω(x) is a (2r+1)×(2r+1) window truncated at the image border. The
channel-wise deraining argument compares how many pixels of two derained
images reach the top of the intensity range in their bright channels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict

import numpy as np
from scipy.ndimage import maximum_filter

from ..core.errors import ArityError, ConfigurationError, PreconditionError
from ..core.imaging import ImageTensor, clamp


@dataclass(frozen=True)
class BrightChannelConfig:
    patch_radius: int = 2
    brightness_tolerance: float = 1.0 / 255.0

    def __post_init__(self) -> None:
        if self.patch_radius < 0:
            raise ConfigurationError("patch_radius must be non-negative")
        if not 0.0 <= self.brightness_tolerance < 1.0:
            raise ConfigurationError("brightness_tolerance must lie in [0, 1)")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BrightChannelConfig":
        return cls(**data)


def bright_channel(img: ImageTensor, cfg: BrightChannelConfig = BrightChannelConfig()) -> ImageTensor:
    channel_max = img.data.max(axis=2)
    # Edge replication never introduces a value that is not already inside the
    # truncated window, so "nearest" is exactly border truncation for a max.
    size = 2 * cfg.patch_radius + 1
    return ImageTensor(maximum_filter(channel_max, size=size, mode="nearest"))


def count_bright_pixels(img: ImageTensor, cfg: BrightChannelConfig = BrightChannelConfig()) -> int:
    """Number of pixels p with 1 - J_bright(p) <= tolerance."""
    bright = bright_channel(img, cfg).data[:, :, 0]
    return int(np.count_nonzero(1.0 - bright <= cfg.brightness_tolerance))


def bright_channel_histogram(
    img: ImageTensor, cfg: BrightChannelConfig = BrightChannelConfig(), bins: int = 256
) -> np.ndarray:
    """Normalised intensity histogram of the bright channel over [0, 1]."""
    bright = bright_channel(img, cfg).data
    counts, _ = np.histogram(bright, bins=bins, range=(0.0, 1.0))
    return counts / bright.size


@dataclass(frozen=True)
class Proposition1Result:
    passed: bool
    bright_channelwise: int
    bright_gray: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def proposition1_check(
    observed: ImageTensor,
    rain_channelwise: ImageTensor,
    rain_gray: ImageTensor,
    cfg: BrightChannelConfig = BrightChannelConfig(),
) -> Proposition1Result:
    """Compare bright-pixel counts of B = O - R_chan and B̄ = O - R_gray.

    Requires R_chan <= R_gray elementwise. Passes when B has at least as many
    bright pixels as B̄.
    """
    if not observed.shape == rain_channelwise.shape == rain_gray.shape:
        raise ArityError("observed image and both rain layers must share one shape")
    if np.any(rain_channelwise.data > rain_gray.data):
        raise PreconditionError("channel-wise rain must not exceed the gray rain layer anywhere")
    derained = clamp(ImageTensor(observed.data - rain_channelwise.data))
    derained_gray = clamp(ImageTensor(observed.data - rain_gray.data))
    count = count_bright_pixels(derained, cfg)
    count_gray = count_bright_pixels(derained_gray, cfg)
    return Proposition1Result(
        passed=count >= count_gray, bright_channelwise=count, bright_gray=count_gray
    )
