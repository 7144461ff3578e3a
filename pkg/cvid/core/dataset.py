"""
Paired clean/rainy dataset generation and manifests

A manifest is a JSON document listing (clean, rainy, density R/G/B) file
triples relative to the manifest's own directory, plus the generation
parameters needed to reproduce them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from ..utils.records import dump_json, load_json
from ..utils.seeding import derive_seed, numpy_rng
from .errors import BoundsError, ConfigurationError
from .imaging import (
    CHANNEL_NAMES,
    LOSSLESS_FORMATS,
    ImageTensor,
    PatchSpec,
    extract_patch,
    load_image,
    quantize,
    save_image,
)
from .rain import RainParams, density_ground_truth, synthesize_rain

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "cvid-manifest"


@dataclass(frozen=True)
class ManifestEntry:
    clean: str
    rainy: str
    density: Tuple[str, ...] = ()

    @property
    def has_density(self) -> bool:
        return len(self.density) == 3

    def to_dict(self) -> Dict[str, Any]:
        return {"clean": self.clean, "rainy": self.rainy, "density": list(self.density)}


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    patch_size: int
    seed: int
    root: Path = field(default_factory=Path)
    rain_params: Optional[Dict[str, Any]] = None
    source_dir: Optional[str] = None

    @property
    def count(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def load_pair(self, index: int) -> Tuple[ImageTensor, ImageTensor]:
        """(clean, rainy) for one entry."""
        entry = self.entries[index]
        return load_image(self.resolve(entry.clean)), load_image(self.resolve(entry.rainy))

    def load_density(self, index: int) -> Tuple[ImageTensor, ...]:
        entry = self.entries[index]
        if not entry.has_density:
            raise ConfigurationError(f"manifest entry {index} has no density labels")
        return tuple(load_image(self.resolve(p)) for p in entry.density)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": MANIFEST_FORMAT,
            "count": self.count,
            "patch_size": self.patch_size,
            "seed": self.seed,
            "rain_params": self.rain_params,
            "source_dir": self.source_dir,
            "entries": [e.to_dict() for e in self.entries],
        }

    def save(self, path: Optional[PathLike] = None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        return dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path: PathLike) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            data = load_json(path)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"manifest not found: {path}") from exc
        except ValueError as exc:
            raise ConfigurationError(f"manifest {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict) or data.get("format") != MANIFEST_FORMAT:
            raise ConfigurationError(f"{path} is not a CVID manifest")

        entries = [
            ManifestEntry(e["clean"], e["rainy"], tuple(e.get("density") or ()))
            for e in data.get("entries", [])
        ]
        if data.get("count", len(entries)) != len(entries):
            raise ConfigurationError(
                f"manifest count {data.get('count')} disagrees with {len(entries)} entries"
            )
        manifest = cls(
            entries=entries,
            patch_size=int(data.get("patch_size", 0)),
            seed=int(data.get("seed", 0)),
            root=path.parent,
            rain_params=data.get("rain_params"),
            source_dir=data.get("source_dir"),
        )
        missing = [
            rel
            for entry in entries
            for rel in (entry.clean, entry.rainy, *entry.density)
            if not manifest.resolve(rel).exists()
        ]
        if missing:
            raise ConfigurationError(
                f"manifest {path} references {len(missing)} missing file(s), first: {missing[0]}"
            )
        return manifest


def list_images(directory: PathLike) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        return []
    return sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in LOSSLESS_FORMATS
    )


def _entry_files(index: int) -> ManifestEntry:
    stem = f"{index:05d}"
    return ManifestEntry(
        clean=f"clean/{stem}.png",
        rainy=f"rainy/{stem}.png",
        density=tuple(f"density/{stem}_{c}.png" for c in CHANNEL_NAMES),
    )


def _build_entry(
    index: int,
    sources: List[ImageTensor],
    params: RainParams,
    patch_size: int,
    out_dir: Path,
) -> ManifestEntry:
    rng = numpy_rng(params.seed, index)
    source = sources[int(rng.integers(len(sources)))]
    spec = PatchSpec(
        patch_size,
        int(rng.integers(0, source.height - patch_size + 1)),
        int(rng.integers(0, source.width - patch_size + 1)),
    )
    clean = quantize(extract_patch(source, spec))
    entry_params = replace(params, seed=derive_seed(params.seed, index))
    rainy, _ = synthesize_rain(clean, entry_params)
    # Labels are computed on what will actually be stored on disk.
    rainy = quantize(rainy)
    density = density_ground_truth(clean, rainy)

    files = _entry_files(index)
    save_image(clean, out_dir / files.clean)
    save_image(rainy, out_dir / files.rainy)
    for plane, rel in zip(density, files.density):
        save_image(plane, out_dir / rel)
    return files


def build_dataset(
    clean_dir: PathLike,
    params: RainParams,
    count: int,
    patch_size: int,
    out_dir: PathLike,
    workers: int = 1,
) -> DatasetManifest:
    """Synthesize ``count`` clean/rainy/density triples and write their manifest."""
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    if patch_size < 1:
        raise ConfigurationError("patch_size must be positive")
    paths = list_images(clean_dir)
    if not paths:
        raise ConfigurationError(f"no lossless images found in {clean_dir}")

    sources = []
    for path in paths:
        img = load_image(path)
        if img.channels == 1:
            img = ImageTensor(img.data.repeat(3, axis=2))
        if img.height >= patch_size and img.width >= patch_size:
            sources.append(img)
    if not sources:
        raise BoundsError(f"patch size {patch_size} is larger than every image in {clean_dir}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(
        "synthesizing %d pairs of %d×%d patches from %d source image(s)",
        count, patch_size, patch_size, len(sources),
    )

    def job(index: int) -> ManifestEntry:
        return _build_entry(index, sources, params, patch_size, out_dir)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(job, range(count)))
    else:
        entries = [job(i) for i in range(count)]

    manifest = DatasetManifest(
        entries=entries,
        patch_size=patch_size,
        seed=params.seed,
        root=out_dir,
        rain_params=params.to_dict(),
        source_dir=str(Path(clean_dir)),
    )
    manifest.save()
    return manifest


def manifest_from_dirs(rainy_dir: PathLike, clean_dir: PathLike) -> DatasetManifest:
    """Evaluation-only manifest pairing files with the same name in two folders."""
    rainy_dir, clean_dir = Path(rainy_dir), Path(clean_dir)
    entries = []
    for rainy in list_images(rainy_dir):
        clean = clean_dir / rainy.name
        if clean.exists():
            entries.append(ManifestEntry(clean=str(clean.resolve()), rainy=str(rainy.resolve())))
    return DatasetManifest(entries=entries, patch_size=0, seed=0, root=Path("/"))
