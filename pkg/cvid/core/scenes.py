"""Procedural clean scenes so datasets can be built without external photographs."""

from __future__ import annotations

from pathlib import Path
from typing import List, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from ..utils.seeding import numpy_rng
from .imaging import ImageTensor, quantize, save_image


def procedural_scene(height: int, width: int, seed: int) -> ImageTensor:
    """A smooth RGB scene: colour gradient, soft blobs and a few hard edges."""
    rng = numpy_rng(seed, 0x5CE7E)
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    u, v = rows / max(height - 1, 1), cols / max(width - 1, 1)

    base = rng.uniform(0.1, 0.6, size=3)
    slope = rng.uniform(-0.3, 0.3, size=(3, 2))
    img = base + slope[:, 0] * u[..., None] + slope[:, 1] * v[..., None]

    for _ in range(int(rng.integers(3, 7))):
        cr, cc = rng.uniform(0, height), rng.uniform(0, width)
        radius = rng.uniform(0.1, 0.35) * min(height, width)
        weight = np.exp(-((rows - cr) ** 2 + (cols - cc) ** 2) / (2 * radius**2))
        img += weight[..., None] * rng.uniform(-0.25, 0.25, size=3)

    # Rectangles give the SSIM/PSNR something structural to measure.
    for _ in range(int(rng.integers(1, 4))):
        r0, c0 = int(rng.integers(0, height)), int(rng.integers(0, width))
        h, w = int(rng.integers(2, max(3, height // 2))), int(rng.integers(2, max(3, width // 2)))
        img[r0 : r0 + h, c0 : c0 + w] += rng.uniform(-0.2, 0.2, size=3)

    texture = gaussian_filter(rng.normal(0.0, 0.04, size=(height, width, 3)), sigma=(1, 1, 0))
    return quantize(ImageTensor(np.clip(img + texture, 0.0, 0.75)))


def write_scenes(
    out_dir: Union[str, Path], count: int, size: int, seed: int
) -> List[Path]:
    out_dir = Path(out_dir)
    return [
        save_image(procedural_scene(size, size, seed + i), out_dir / f"scene_{i:04d}.png")
        for i in range(count)
    ]
