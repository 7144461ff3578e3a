"""Monte-Carlo deraining: average decoder outputs over n latent codes drawn from the prior.

Sample j of channel group c always draws its noise from the stream keyed
(seed, c, j), so increasing n never changes the earlier samples and one
pass can serve a whole sweep of sample counts.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import torch

from ..core.dataset import MANIFEST_NAME, DatasetManifest, list_images
from ..core.errors import CheckpointError, ConfigurationError, CvidError
from ..core.imaging import (
    LOSSLESS_FORMATS,
    ImageTensor,
    clamp,
    from_tensor,
    load_image,
    save_image,
    to_tensor,
)
from ..metrics.quality import MetricReport, MetricSettings, build_report, evaluate_pair
from ..ml.checkpoint import ModelCheckpoint
from ..ml.networks import (
    CVIDNet,
    GaussianLatent,
    decoder_forward,
    prior_forward,
    reparameterize,
    sde_forward,
)
from ..utils.seeding import torch_generator

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ModelLike = Union[CVIDNet, ModelCheckpoint]


@dataclass(frozen=True)
class InferenceConfig:
    n_samples: int = 100
    seed: int = 0
    emit_intermediates: bool = False
    sigma_scale: float = 1.0  # multiplies σ_p; 0 collapses every draw onto μ_p
    sample_chunk: int = 16  # latent codes decoded per forward pass

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be at least 1")
        if self.sigma_scale < 0:
            raise ConfigurationError("sigma_scale must be non-negative")
        if self.sample_chunk < 1:
            raise ConfigurationError("sample_chunk must be at least 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "InferenceConfig":
        return cls(**data)


@dataclass
class DerainResult:
    image: ImageTensor
    density: ImageTensor
    elapsed_seconds: float
    intermediates: Optional[List[ImageTensor]] = None


def resolve_model(model: ModelLike) -> CVIDNet:
    if isinstance(model, ModelCheckpoint):
        return model.to_model()
    if isinstance(model, CVIDNet):
        return model
    raise CheckpointError(f"expected a CVIDNet or ModelCheckpoint, got {type(model).__name__}")


def _condition(
    model: CVIDNet, x: torch.Tensor
) -> Tuple[List[torch.Tensor], List[GaussianLatent]]:
    """Density estimate and prior for every channel group of a (1, 3, H, W) input."""
    densities, priors = [], []
    for name, planes in model.channel_groups:
        branch = model.branches[name]
        x_c = x[:, planes]
        d_c = sde_forward(x_c, branch)
        densities.append(d_c)
        priors.append(prior_forward(x_c, d_c, branch))
    return densities, priors


def _decode_samples(
    model: CVIDNet,
    x: torch.Tensor,
    densities: List[torch.Tensor],
    priors: List[GaussianLatent],
    indices: range,
    config: InferenceConfig,
) -> torch.Tensor:
    """Decoded samples ``indices`` as a float64 (k, 3, H, W) tensor."""
    k = len(indices)
    decoded = []
    for index, (name, planes) in enumerate(model.channel_groups):
        branch = model.branches[name]
        z = torch.cat(
            [
                reparameterize(
                    priors[index], torch_generator(config.seed, index, j), config.sigma_scale
                )
                for j in indices
            ]
        )
        x_c = x[:, planes].expand(k, -1, -1, -1)
        d_c = densities[index].expand(k, -1, -1, -1)
        decoded.append(decoder_forward(x_c, z, d_c, branch))
    return torch.cat(decoded, dim=1).to(torch.float64)


def _iter_samples(
    model: CVIDNet, x: ImageTensor, config: InferenceConfig, count: int
) -> Iterator[Tuple[int, torch.Tensor, torch.Tensor]]:
    """Yield (sample index, decoded (3, H, W) float64 sample, density) in order."""
    if x.channels != 3:
        raise ConfigurationError(f"deraining needs an RGB image, got {x.channels} channels")
    model.eval()
    with torch.no_grad():
        xt = to_tensor(x, model.dtype)
        densities, priors = _condition(model, xt)
        density = torch.cat(densities, dim=1)[0]
        for start in range(0, count, config.sample_chunk):
            batch = _decode_samples(
                model, xt, densities, priors, range(start, min(count, start + config.sample_chunk)), config
            )
            for offset, sample in enumerate(batch):
                yield start + offset, sample, density


def derain(x: ImageTensor, model: ModelLike, config: InferenceConfig = InferenceConfig()) -> DerainResult:
    """ŷ = (1/n) Σ_j decoder(x, z_j, D̂), z_j ~ prior(x, D̂); clamped once after averaging."""
    net = resolve_model(model)
    start = time.perf_counter()
    total: Optional[torch.Tensor] = None
    density = None
    intermediates: Optional[List[ImageTensor]] = [] if config.emit_intermediates else None
    for _, sample, density in _iter_samples(net, x, config, config.n_samples):
        # Fixed-order float64 accumulation keeps the average bit-reproducible.
        total = sample.clone() if total is None else total + sample
        if intermediates is not None:
            intermediates.append(from_tensor(sample))
    mean = total / config.n_samples
    return DerainResult(
        image=clamp(from_tensor(mean)),
        density=from_tensor(density),
        elapsed_seconds=time.perf_counter() - start,
        intermediates=intermediates,
    )


def derain_sweep(
    x: ImageTensor,
    model: ModelLike,
    config: InferenceConfig,
    sample_counts: Sequence[int],
) -> Dict[int, ImageTensor]:
    """Averaged outputs for several n from a single incremental pass."""
    counts = sorted(set(int(n) for n in sample_counts))
    if not counts or counts[0] < 1:
        raise ConfigurationError("sample counts must be positive integers")
    net = resolve_model(model)
    results: Dict[int, ImageTensor] = {}
    total: Optional[torch.Tensor] = None
    for index, sample, _ in _iter_samples(net, x, config, counts[-1]):
        total = sample.clone() if total is None else total + sample
        if index + 1 in counts:
            results[index + 1] = clamp(from_tensor(total / (index + 1)))
    return results


@dataclass
class BatchResult:
    outputs: List[Path] = field(default_factory=list)
    failures: Dict[str, str] = field(default_factory=dict)
    report: Optional[MetricReport] = None


def list_jobs(
    source: Union[PathLike, DatasetManifest],
) -> List[Tuple[str, Path, Optional[Path]]]:
    """(output name, rainy path, optional clean path) for an image, a directory or a manifest."""
    if isinstance(source, DatasetManifest):
        manifest = source
    else:
        source = Path(source)
        if source.is_file() and source.suffix.lower() in LOSSLESS_FORMATS:
            return [(source.with_suffix(".png").name, source, None)]
        if source.is_dir() and not (source / MANIFEST_NAME).exists():
            return [(p.with_suffix(".png").name, p, None) for p in list_images(source)]
        manifest = DatasetManifest.load(source)
    return [
        (Path(e.rainy).with_suffix(".png").name, manifest.resolve(e.rainy), manifest.resolve(e.clean))
        for e in manifest.entries
    ]


def derain_batch(
    source: Union[PathLike, DatasetManifest],
    model: ModelLike,
    config: InferenceConfig,
    out_dir: PathLike,
    metrics: Optional[MetricSettings] = None,
) -> BatchResult:
    """Derain every image of a directory or manifest; per-file failures do not stop the batch."""
    net = resolve_model(model)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = BatchResult()
    rows = []
    for name, rainy_path, clean_path in list_jobs(source):
        try:
            rainy = load_image(rainy_path)
            derained = derain(rainy, net, config)
            result.outputs.append(save_image(derained.image, out_dir / name))
            if derained.intermediates is not None:
                stem = Path(name).stem
                for j, sample in enumerate(derained.intermediates, start=1):
                    save_image(sample, out_dir / "intermediates" / f"{stem}_s{j:03d}.png")
            if clean_path is not None:
                rows.append(
                    evaluate_pair(Path(name).stem, derained.image, load_image(clean_path), metrics or MetricSettings())
                )
            logger.info("derained %s in %.3fs", rainy_path, derained.elapsed_seconds)
        except (CvidError, OSError) as exc:
            logger.warning("skipping %s: %s", rainy_path, exc)
            result.failures[str(rainy_path)] = str(exc)
    if rows:
        result.report = build_report(rows, metrics or MetricSettings())
    return result


def derain_sweep_batch(
    source: Union[PathLike, DatasetManifest],
    model: ModelLike,
    config: InferenceConfig,
    sample_counts: Sequence[int],
    out_dir: PathLike,
    metrics: Optional[MetricSettings] = None,
) -> BatchResult:
    """derain_sweep over a batch; writes ``<stem>_n<n>.png`` and scores every n against ground truth."""
    net = resolve_model(model)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = metrics or MetricSettings()
    result = BatchResult()
    rows = []
    for name, rainy_path, clean_path in list_jobs(source):
        stem = Path(name).stem
        try:
            outputs = derain_sweep(load_image(rainy_path), net, config, sample_counts)
            clean = load_image(clean_path) if clean_path is not None else None
            for n, image in sorted(outputs.items()):
                result.outputs.append(save_image(image, out_dir / f"{stem}_n{n:03d}.png"))
                if clean is not None:
                    rows.append(evaluate_pair(f"{stem}_n{n:03d}", image, clean, settings))
            logger.info("swept %s over n=%s", rainy_path, ",".join(str(n) for n in sorted(outputs)))
        except (CvidError, OSError) as exc:
            logger.warning("skipping %s: %s", rainy_path, exc)
            result.failures[str(rainy_path)] = str(exc)
    if rows:
        result.report = build_report(rows, settings)
    return result
