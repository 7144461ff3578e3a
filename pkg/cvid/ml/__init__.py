"""Networks, objectives and checkpoints for channel-wise conditional variational deraining."""

from .checkpoint import ModelCheckpoint
from .losses import LossBreakdown, kl_gaussian, reconstruction_loss, sde_loss, total_loss
from .networks import (
    CVIDNet,
    GaussianLatent,
    NetworkConfig,
    derain_channelwise_forward,
    reparameterize,
)

__all__ = [
    "CVIDNet",
    "GaussianLatent",
    "LossBreakdown",
    "ModelCheckpoint",
    "NetworkConfig",
    "derain_channelwise_forward",
    "kl_gaussian",
    "reconstruction_loss",
    "reparameterize",
    "sde_loss",
    "total_loss",
]
