"""
Image representation and lossless raster I/O for CVID

ImageTensor is the single carrier for clean, rainy and derained images as
well as density maps: a float64 array in row-major (height, width, channel)
order with intensities in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import ArityError, BoundsError, ImageFormatError, ImageIOError

PathLike = Union[str, Path]

CHANNEL_NAMES = ("R", "G", "B")

# Lossless 8-bit formats only; the Pillow format name is what `Image.open` reports.
LOSSLESS_FORMATS = {
    ".png": "PNG",
    ".bmp": "BMP",
    ".tif": "TIFF",
    ".tiff": "TIFF",
    ".ppm": "PPM",
    ".pgm": "PPM",
}
_READABLE_MODES = {"L": 1, "RGB": 3}
_CONVERTIBLE_MODES = {"P": "RGB", "RGBA": "RGB", "LA": "L", "1": "L"}


@dataclass(frozen=True)
class ImageTensor:
    """An H×W×C raster of real intensities, C in {1, 3}, channel order (R, G, B)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ArityError(
                f"image must be H×W×1 or H×W×3, got shape {tuple(np.shape(self.data))}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ArityError("image must have positive height and width")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 3) -> "ImageTensor":
        return cls(np.zeros((height, width, channels)))

    def plane(self, channel: int) -> np.ndarray:
        """2-D view of one channel."""
        return self.data[:, :, channel]

    def clamp(self) -> "ImageTensor":
        return clamp(self)


def clamp(img: ImageTensor) -> ImageTensor:
    """Clip every element into [0, 1]; idempotent."""
    return ImageTensor(np.clip(img.data, 0.0, 1.0))


def quantize(img: ImageTensor) -> ImageTensor:
    """Round-to-nearest onto the 8-bit grid, i.e. what save followed by load yields."""
    return ImageTensor(_to_uint8(img.data).astype(np.float64) / 255.0)


def _to_uint8(data: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def load_image(path: PathLike) -> ImageTensor:
    """Read an 8-bit lossless raster; value v maps to v/255."""
    path = Path(path)
    try:
        with Image.open(path) as pil:
            fmt = pil.format
            if fmt not in set(LOSSLESS_FORMATS.values()):
                raise ImageFormatError(f"{path}: unsupported format {fmt!r}")
            mode = pil.mode
            if mode in _CONVERTIBLE_MODES:
                pil = pil.convert(_CONVERTIBLE_MODES[mode])
                mode = pil.mode
            if mode not in _READABLE_MODES:
                raise ImageFormatError(f"{path}: unsupported pixel mode {mode!r}")
            raw = np.asarray(pil, dtype=np.uint8)
    except ImageFormatError:
        raise
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a recognised raster image") from exc
    except OSError as exc:
        raise ImageIOError(f"could not read {path}: {exc}") from exc
    return ImageTensor(raw.astype(np.float64) / 255.0)


def save_image(img: ImageTensor, path: PathLike) -> Path:
    """Write ``img`` as an 8-bit lossless raster chosen from the file suffix."""
    path = Path(path)
    fmt = LOSSLESS_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise ImageFormatError(
            f"{path}: unsupported suffix (choices: {', '.join(sorted(LOSSLESS_FORMATS))})"
        )
    pixels = _to_uint8(img.data)
    pil = Image.fromarray(pixels[:, :, 0] if img.channels == 1 else pixels)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pil.save(path, format=fmt)
    except OSError as exc:
        raise ImageIOError(f"could not write {path}: {exc}") from exc
    return path


def split_channels(img: ImageTensor) -> Tuple[ImageTensor, ImageTensor, ImageTensor]:
    """Split an RGB image into its (R, G, B) single-channel planes."""
    if img.channels != 3:
        raise ArityError(f"split_channels needs 3 channels, got {img.channels}")
    return tuple(ImageTensor(img.data[:, :, c : c + 1]) for c in range(3))


def merge_channels(planes: Sequence[ImageTensor]) -> ImageTensor:
    """Inverse of ``split_channels``."""
    if len(planes) != 3 or any(p.channels != 1 for p in planes):
        raise ArityError("merge_channels needs exactly three single-channel planes")
    if len({p.shape for p in planes}) != 1:
        raise ArityError("planes differ in spatial shape")
    return ImageTensor(np.concatenate([p.data for p in planes], axis=2))


@dataclass(frozen=True)
class PatchSpec:
    size: int
    origin_row: int = 0
    origin_col: int = 0

    def __post_init__(self) -> None:
        if self.size < 1:
            raise BoundsError(f"patch size must be positive, got {self.size}")

    def fits(self, height: int, width: int) -> bool:
        return (
            self.origin_row >= 0
            and self.origin_col >= 0
            and self.origin_row + self.size <= height
            and self.origin_col + self.size <= width
        )


def extract_patch(img: ImageTensor, spec: PatchSpec) -> ImageTensor:
    if not spec.fits(img.height, img.width):
        raise BoundsError(
            f"patch {spec.size}×{spec.size} at ({spec.origin_row}, {spec.origin_col}) "
            f"exceeds image {img.height}×{img.width}"
        )
    r, c, s = spec.origin_row, spec.origin_col, spec.size
    return ImageTensor(img.data[r : r + s, c : c + s, :])


def to_tensor(
    img: ImageTensor, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """ImageTensor (H, W, C) -> torch tensor (1, C, H, W)."""
    return torch.tensor(np.ascontiguousarray(img.data.transpose(2, 0, 1)), dtype=dtype)[None]


def from_tensor(tensor: torch.Tensor) -> ImageTensor:
    """Torch tensor (C, H, W) or (1, C, H, W) -> ImageTensor (H, W, C)."""
    t = tensor.detach()
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ArityError(f"expected a single image, got batch of {t.shape[0]}")
        t = t[0]
    return ImageTensor(t.to(torch.float64).cpu().numpy().transpose(1, 2, 0))
