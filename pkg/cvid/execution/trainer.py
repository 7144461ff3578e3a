"""
Training loop for the channel-wise CVID network

Per mini-batch and channel: D̂_c from the SDE net, posterior from
(x_c, y_c, D̂_c), prior from (x_c, D̂_c), one z ~ posterior, ŷ_c from the
decoder; then one joint AdamW step on L_CVID = L_rec + β·L_KL + λ·L_SDE.
The learning rate is multiplied by ``lr_decay`` at every epoch boundary.
"""

from __future__ import annotations

import contextlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset

from ..core.dataset import DatasetManifest
from ..core.errors import ConfigurationError, TrainingDivergedError
from ..core.imaging import ImageTensor, PatchSpec, extract_patch, merge_channels, to_tensor
from ..metrics.quality import SSIM_WINDOW, psnr, ssim
from ..ml.checkpoint import ModelCheckpoint
from ..ml.losses import LossBreakdown, kl_gaussian, reconstruction_loss, sde_loss, total_loss
from ..ml.networks import CVIDNet, ForwardOutput, NetworkConfig, derain_channelwise_forward
from ..utils.records import dump_jsonl
from ..utils.seeding import derive_seed, numpy_rng, torch_generator
from .inference import InferenceConfig, derain

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
DTYPES = {"float32": torch.float32, "float64": torch.float64}
VALIDATION_ENTRIES = 8


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.1
    lam: float = 1.0
    lr: float = 0.01
    lr_decay: float = 0.1  # per-epoch multiplier: divide by 10
    epochs: int = 4
    batch_size: int = 32
    patch_size: int = 64
    weight_decay: float = 1e-10
    seed: int = 0
    max_steps: Optional[int] = None
    log_every: int = 10
    dtype: str = "float32"
    deterministic: bool = True
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self) -> None:
        if isinstance(self.network, dict):
            object.__setattr__(self, "network", NetworkConfig.from_dict(self.network))
        if self.lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigurationError("lr must be positive and lr_decay must lie in (0, 1]")
        if self.weight_decay < 0 or self.beta < 0 or self.lam < 0:
            raise ConfigurationError("beta, lambda and weight_decay must be non-negative")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.batch_size < 1 or self.patch_size < 1 or self.log_every < 1:
            raise ConfigurationError("batch_size, patch_size and log_every must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be positive when given")
        if self.dtype not in DTYPES:
            raise ConfigurationError(f"dtype must be one of {', '.join(DTYPES)}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        return cls(**data)


@dataclass(frozen=True)
class StepRecord:
    step: int
    epoch: int
    lr: float
    kl: float
    rec: float
    sde: float
    cvae: float
    total: float
    wall_time: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    step: int
    lr: float
    val_psnr: float
    val_ssim: float
    wall_time: float


@dataclass
class TrainLog:
    header: Dict[str, Any] = field(default_factory=dict)
    steps: List[StepRecord] = field(default_factory=list)
    epochs: List[EpochRecord] = field(default_factory=list)

    def add_step(self, record: StepRecord) -> None:
        if self.steps and record.step <= self.steps[-1].step:
            raise ValueError(f"step {record.step} does not follow step {self.steps[-1].step}")
        self.steps.append(record)

    def totals(self) -> List[float]:
        return [r.total for r in self.steps]

    def smoothed_totals(self, alpha: float = 0.1) -> List[float]:
        """Exponential moving average of the total loss, seeded with the first value."""
        smoothed: List[float] = []
        for value in self.totals():
            smoothed.append(value if not smoothed else alpha * value + (1 - alpha) * smoothed[-1])
        return smoothed

    def records(self) -> Iterator[Dict[str, Any]]:
        yield {"kind": "header", **self.header}
        for record in self.steps:
            yield {"kind": "step", **asdict(record)}
        for record in self.epochs:
            yield {"kind": "epoch", **asdict(record)}

    def write(self, path: PathLike) -> Path:
        return dump_jsonl(self.records(), path)


@contextlib.contextmanager
def _torch_threads(single: bool) -> Iterator[None]:
    previous = torch.get_num_threads()
    if single:
        torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def _crop(img: ImageTensor, size: int, rng: np.random.Generator) -> ImageTensor:
    if img.height == size and img.width == size:
        return img
    if img.height < size or img.width < size:
        raise ConfigurationError(
            f"training patch size {size} exceeds manifest image size {img.height}×{img.width}"
        )
    row = int(rng.integers(0, img.height - size + 1))
    col = int(rng.integers(0, img.width - size + 1))
    return extract_patch(img, PatchSpec(size, row, col))


def load_training_set(
    manifest: DatasetManifest, patch_size: int, seed: int, dtype: torch.dtype
) -> TensorDataset:
    """(rainy, clean, density) tensors, one aligned patch per manifest entry."""
    if manifest.count == 0:
        raise ConfigurationError("training manifest is empty")
    missing = [i for i, e in enumerate(manifest.entries) if not e.has_density]
    if missing:
        raise ConfigurationError(
            f"{len(missing)} manifest entr{'y' if len(missing) == 1 else 'ies'} lack density labels"
        )
    rainy, clean, density = [], [], []
    for index in range(manifest.count):
        y, x = manifest.load_pair(index)
        d = merge_channels(manifest.load_density(index))
        # One rng per entry crops all three images at the same origin.
        crops = [_crop(img, patch_size, numpy_rng(seed, 0xC409, index)) for img in (x, y, d)]
        rainy.append(to_tensor(crops[0], dtype))
        clean.append(to_tensor(crops[1], dtype))
        density.append(to_tensor(crops[2], dtype))
    return TensorDataset(torch.cat(rainy), torch.cat(clean), torch.cat(density))


def compute_loss(
    model: CVIDNet,
    rainy: torch.Tensor,
    clean: torch.Tensor,
    density: torch.Tensor,
    config: TrainConfig,
    noise_seed: int,
) -> Tuple[LossBreakdown, ForwardOutput]:
    out = derain_channelwise_forward(rainy, clean, model, "train", noise_seed)
    kl = sum(kl_gaussian(out.posteriors[c], out.priors[c]) for c in out.priors)
    rec = reconstruction_loss(clean, out.yhat)
    sde = sde_loss(density, out.dhat) if model.config.use_sde else torch.zeros((), dtype=rec.dtype)
    return total_loss(kl, rec, sde, config.beta, config.lam), out


def validate(
    checkpoint: Union[ModelCheckpoint, CVIDNet],
    manifest: DatasetManifest,
    n_samples: int = 1,
    seed: int = 0,
) -> Tuple[float, float]:
    """Mean PSNR and SSIM of derained vs clean over the manifest.

    SSIM is NaN when the images are smaller than its window.
    """
    if manifest.count == 0:
        raise ConfigurationError("validation manifest is empty")
    config = InferenceConfig(n_samples=n_samples, seed=seed)
    model = checkpoint.to_model() if isinstance(checkpoint, ModelCheckpoint) else checkpoint
    psnrs, ssims = [], []
    for index in range(manifest.count):
        clean, rainy = manifest.load_pair(index)
        derained = derain(rainy, model, config).image
        psnrs.append(psnr(derained, clean))
        if min(clean.height, clean.width) >= SSIM_WINDOW:
            ssims.append(ssim(derained, clean))
    return float(np.mean(psnrs)), float(np.mean(ssims)) if ssims else math.nan


def _subset(manifest: DatasetManifest, count: int) -> DatasetManifest:
    return DatasetManifest(
        entries=manifest.entries[:count],
        patch_size=manifest.patch_size,
        seed=manifest.seed,
        root=manifest.root,
        rain_params=manifest.rain_params,
    )


def train(
    manifest: DatasetManifest,
    config: TrainConfig = TrainConfig(),
    validation: Optional[DatasetManifest] = None,
    checkpoint_dir: Optional[PathLike] = None,
    on_step: Optional[Callable[[StepRecord], None]] = None,
) -> Tuple[ModelCheckpoint, TrainLog]:
    dtype = DTYPES[config.dtype]
    validation = validation if validation is not None else _subset(manifest, VALIDATION_ENTRIES)
    log = TrainLog(
        header={
            "train_config": config.to_dict(),
            "network_config": config.network.to_dict(),
            "beta": config.beta,
            "lambda": config.lam,
            "pairs": manifest.count,
            "manifest_seed": manifest.seed,
        }
    )
    logger.info("training on %d pairs: beta=%s lambda=%s", manifest.count, config.beta, config.lam)

    with _torch_threads(config.deterministic):
        dataset = load_training_set(manifest, config.patch_size, config.seed, dtype)
        loader = DataLoader(
            dataset,
            batch_size=config.batch_size,
            shuffle=True,
            generator=torch_generator(config.seed, 0xBA7C),
        )
        model = CVIDNet(config.network, seed=config.seed).to(dtype)
        optimizer = torch.optim.AdamW(
            model.parameters(), lr=config.lr, weight_decay=config.weight_decay
        )
        scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=1, gamma=config.lr_decay)

        start = time.perf_counter()
        step = 0
        last_finite: Optional[int] = None
        epoch = 0
        for epoch in range(1, config.epochs + 1):
            model.train()
            for rainy, clean, density in loader:
                step += 1
                lr = optimizer.param_groups[0]["lr"]
                breakdown, _ = compute_loss(
                    model, rainy, clean, density, config, derive_seed(config.seed, 0x57E9, step)
                )
                if not breakdown.is_finite():
                    raise TrainingDivergedError(step, last_finite, float(breakdown.total))
                optimizer.zero_grad()
                breakdown.total.backward()
                optimizer.step()
                last_finite = step

                record = StepRecord(
                    step=step,
                    epoch=epoch,
                    lr=lr,
                    wall_time=time.perf_counter() - start,
                    **breakdown.to_record(),
                )
                log.add_step(record)
                if on_step is not None:
                    on_step(record)
                if step % config.log_every == 0:
                    logger.info(
                        "step %d epoch %d lr %.2e | kl %.4f rec %.4f sde %.4f total %.4f",
                        step, epoch, lr, record.kl, record.rec, record.sde, record.total,
                    )
                if config.max_steps is not None and step >= config.max_steps:
                    break

            lr = optimizer.param_groups[0]["lr"]
            scheduler.step()
            snapshot = ModelCheckpoint.from_model(
                model, {"epoch": epoch, "step": step, "seed": config.seed, "dtype": config.dtype}
            )
            val_psnr, val_ssim = validate(snapshot, validation, n_samples=1, seed=config.seed)
            log.epochs.append(
                EpochRecord(epoch, step, lr, val_psnr, val_ssim, time.perf_counter() - start)
            )
            logger.info("epoch %d done: validation PSNR %.3f dB, SSIM %.4f", epoch, val_psnr, val_ssim)
            if checkpoint_dir is not None:
                snapshot.save(Path(checkpoint_dir) / f"checkpoint_e{epoch:03d}_s{step:06d}.pt")
            if config.max_steps is not None and step >= config.max_steps:
                break

    final = ModelCheckpoint.from_model(
        model, {"epoch": epoch, "step": step, "seed": config.seed, "dtype": config.dtype}
    )
    return final, log
