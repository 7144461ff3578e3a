"""
Per-channel CVAE and spatial density estimation networks

Each colour channel c owns an independent ChannelBranch:

    sde      x_c              -> D̂_c            (dense block, sigmoid)
    encoder  (x_c, y_c, D̂_c)  -> N(μ_e, σ_e)    (posterior, training only)
    prior    (x_c, D̂_c)       -> N(μ_p, σ_p)
    decoder  (x_c, z, D̂_c)    -> ŷ_c            (sigmoid)

With ``channel_wise=False`` a single "RGB" branch handles all three planes
at once (3-plane latent, 3-plane density); it exists for the ablation
against the channel-wise scheme.

All layers are stride-1 with same padding, so every map keeps the input's
spatial shape and the latent z aligns pixelwise with its conditioning planes.
Tensors are batched as (N, C, H, W).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import torch
from torch import nn

from ..core.errors import ArityError, ConfigurationError, ContractError
from ..core.imaging import CHANNEL_NAMES, ImageTensor, to_tensor
from ..utils.seeding import torch_generator

NETWORK_NAMES = ("encoder", "prior", "decoder", "sde")
MODES = ("train", "infer")
JOINT_BRANCH = "RGB"

# (branch name, slice of the image planes it handles)
ChannelGroup = Tuple[str, slice]
CHANNEL_GROUPS: Tuple[ChannelGroup, ...] = tuple(
    (name, slice(index, index + 1)) for index, name in enumerate(CHANNEL_NAMES)
)
JOINT_GROUPS: Tuple[ChannelGroup, ...] = ((JOINT_BRANCH, slice(0, 3)),)


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 7  # hidden layers + the output layer
    filters: int = 16
    kernel: int = 3
    sde_layers: int = 5
    leaky_slope: float = 0.2
    use_sde: bool = True
    channel_wise: bool = True

    def __post_init__(self) -> None:
        if self.depth < 1 or self.sde_layers < 1:
            raise ConfigurationError("depth and sde_layers must be at least 1")
        if self.filters < 1:
            raise ConfigurationError("filters must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError("kernel must be a positive odd integer")
        if self.leaky_slope < 0:
            raise ConfigurationError("leaky_slope must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkConfig":
        return cls(**data)


@dataclass
class GaussianLatent:
    """Per-pixel diagonal Gaussian; ``mu`` and ``sigma`` are (N, k, H, W), k latent planes."""

    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self) -> None:
        if self.mu.shape != self.sigma.shape:
            raise ArityError(
                f"mu {tuple(self.mu.shape)} and sigma {tuple(self.sigma.shape)} differ in shape"
            )

    @property
    def log_sigma(self) -> torch.Tensor:
        return torch.log(self.sigma)


def reparameterize(
    latent: GaussianLatent,
    noise_seed: Union[int, torch.Generator],
    sigma_scale: float = 1.0,
) -> torch.Tensor:
    """z = μ + ε ⊙ σ with ε ~ N(0, I) drawn from the seeded stream."""
    gen = noise_seed if isinstance(noise_seed, torch.Generator) else torch_generator(noise_seed)
    eps = torch.randn(
        latent.mu.shape, generator=gen, dtype=latent.mu.dtype, device=latent.mu.device
    )
    return latent.mu + eps * (latent.sigma * sigma_scale)


def _conv(in_ch: int, out_ch: int, kernel: int, transposed: bool = False) -> nn.Module:
    if transposed:
        return nn.ConvTranspose2d(in_ch, out_ch, kernel, stride=1, padding=kernel // 2)
    return nn.Conv2d(in_ch, out_ch, kernel, stride=1, padding=kernel // 2)


class ConvStack(nn.Module):
    """(depth - 1) × [conv, batch-norm, leaky ReLU] followed by a plain output conv."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        config: NetworkConfig,
        transposed: bool = False,
    ):
        super().__init__()
        self.in_channels = in_channels
        layers: List[nn.Module] = []
        ch = in_channels
        for _ in range(config.depth - 1):
            layers += [
                _conv(ch, config.filters, config.kernel, transposed),
                nn.BatchNorm2d(config.filters),
                nn.LeakyReLU(config.leaky_slope),
            ]
            ch = config.filters
        self.body = nn.Sequential(*layers)
        self.head = _conv(ch, out_channels, config.kernel, transposed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(x))


class GaussianNet(ConvStack):
    """ConvStack with a 2k-channel head read as (μ, log σ²) for k latent planes."""

    def __init__(self, in_channels: int, config: NetworkConfig, latent_channels: int = 1):
        super().__init__(in_channels, 2 * latent_channels, config)
        self.latent_channels = latent_channels

    def forward(self, x: torch.Tensor) -> GaussianLatent:
        out = super().forward(x)
        k = self.latent_channels
        return GaussianLatent(mu=out[:, :k], sigma=torch.exp(out[:, k:] / 2))


class DecoderNet(ConvStack):
    def __init__(self, config: NetworkConfig, planes: int = 1):
        super().__init__(3 * planes, planes, config, transposed=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(super().forward(x))


class DenseDensityNet(nn.Module):
    """Densely connected block: layer k sees the concatenation of all earlier outputs."""

    def __init__(self, in_channels: int, config: NetworkConfig, out_channels: int = 1):
        super().__init__()
        self.in_channels = in_channels
        self.layers = nn.ModuleList()
        ch = in_channels
        for _ in range(config.sde_layers - 1):
            self.layers.append(
                nn.Sequential(
                    _conv(ch, config.filters, config.kernel),
                    nn.BatchNorm2d(config.filters),
                    nn.ReLU(),
                )
            )
            ch += config.filters
        self.head = _conv(ch, out_channels, config.kernel)

    def layer_input_channels(self) -> List[int]:
        convs = [seq[0] for seq in self.layers] + [self.head]
        return [conv.in_channels for conv in convs]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        features = [x]
        for layer in self.layers:
            features.append(layer(torch.cat(features, dim=1)))
        return torch.sigmoid(self.head(torch.cat(features, dim=1)))


class ChannelBranch(nn.Module):
    """Encoder, prior, decoder and (optionally) SDE network over ``planes`` image planes."""

    def __init__(self, config: NetworkConfig, planes: int = 1):
        super().__init__()
        self.config = config
        self.planes = planes
        self.encoder = GaussianNet(3 * planes, config, planes)
        self.prior = GaussianNet(2 * planes, config, planes)
        self.decoder = DecoderNet(config, planes)
        self.sde: Optional[DenseDensityNet] = (
            DenseDensityNet(planes, config, planes) if config.use_sde else None
        )

    def reset_parameters(self, generator: torch.Generator) -> None:
        """Fan-in scaled normal init; the μ/σ heads start at zero (μ=0, σ=1)."""
        gain = math.sqrt(2.0 / (1.0 + self.config.leaky_slope**2))
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.ConvTranspose2d):
                    fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                elif isinstance(module, nn.Conv2d):
                    fan_in = module.weight[0].numel()
                elif isinstance(module, nn.BatchNorm2d):
                    module.reset_parameters()
                    continue
                else:
                    continue
                module.weight.normal_(0.0, gain / math.sqrt(fan_in), generator=generator)
                module.bias.zero_()
            for head in (self.encoder.head, self.prior.head):
                head.weight.zero_()
                head.bias.zero_()


class CVIDNet(nn.Module):
    """Three independent ChannelBranches keyed "R", "G", "B", or one joint "RGB" branch."""

    def __init__(self, config: Optional[NetworkConfig] = None, seed: int = 0):
        super().__init__()
        self.config = config or NetworkConfig()
        self.branches = nn.ModuleDict()
        for index, (name, planes) in enumerate(self.channel_groups):
            branch = ChannelBranch(self.config, planes.stop - planes.start)
            branch.reset_parameters(torch_generator(seed, index))
            self.branches[name] = branch

    @property
    def channel_groups(self) -> Tuple[ChannelGroup, ...]:
        return CHANNEL_GROUPS if self.config.channel_wise else JOINT_GROUPS

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def branch(self, channel: Union[int, str]) -> ChannelBranch:
        name = self.channel_groups[channel][0] if isinstance(channel, int) else channel
        return self.branches[name]


def _check_planes(branch: ChannelBranch, *planes: torch.Tensor) -> None:
    first = planes[0].shape
    for plane in planes:
        if plane.dim() != 4 or plane.shape[1] != branch.planes:
            raise ArityError(
                f"expected (N, {branch.planes}, H, W) planes, got {tuple(plane.shape)}"
            )
        if plane.shape != first:
            raise ArityError(
                f"plane shapes differ: {tuple(first)} vs {tuple(plane.shape)}"
            )


def encoder_forward(
    x_c: torch.Tensor, y_c: torch.Tensor, d_c: torch.Tensor, branch: ChannelBranch
) -> GaussianLatent:
    _check_planes(branch, x_c, y_c, d_c)
    return branch.encoder(torch.cat([x_c, y_c, d_c], dim=1))


def prior_forward(x_c: torch.Tensor, d_c: torch.Tensor, branch: ChannelBranch) -> GaussianLatent:
    _check_planes(branch, x_c, d_c)
    return branch.prior(torch.cat([x_c, d_c], dim=1))


def decoder_forward(
    x_c: torch.Tensor, z: torch.Tensor, d_c: torch.Tensor, branch: ChannelBranch
) -> torch.Tensor:
    _check_planes(branch, x_c, z, d_c)
    return branch.decoder(torch.cat([x_c, z, d_c], dim=1))


def sde_forward(x_c: torch.Tensor, branch: ChannelBranch) -> torch.Tensor:
    """Density estimate D̂_c in [0, 1]; zeros when the branch was built without SDE."""
    _check_planes(branch, x_c)
    if branch.sde is None:
        return torch.zeros_like(x_c)
    return branch.sde(x_c)


@dataclass
class ForwardOutput:
    yhat: torch.Tensor  # (N, 3, H, W)
    dhat: torch.Tensor  # (N, 3, H, W)
    priors: Dict[str, GaussianLatent] = field(default_factory=dict)
    posteriors: Dict[str, GaussianLatent] = field(default_factory=dict)


def _as_batch(img: Union[ImageTensor, torch.Tensor], dtype: torch.dtype) -> torch.Tensor:
    if isinstance(img, ImageTensor):
        return to_tensor(img, dtype)
    return img


def derain_channelwise_forward(
    x: Union[ImageTensor, torch.Tensor],
    y: Optional[Union[ImageTensor, torch.Tensor]],
    model: CVIDNet,
    mode: str,
    noise_seed: int,
) -> ForwardOutput:
    """One stochastic pass over every channel group of the network.

    train: D̂ -> posterior from (x, y, D̂) and prior from (x, D̂) -> z ~ posterior -> ŷ
    infer: D̂ -> prior from (x, D̂) -> z ~ prior -> ŷ (the encoder is never called)
    """
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "train" and y is None:
        raise ContractError("train mode needs the clean image y")
    if mode == "infer" and y is not None:
        raise ContractError("infer mode must not see the clean image y")

    x = _as_batch(x, model.dtype)
    if x.dim() != 4 or x.shape[1] != 3:
        raise ArityError(f"x must be (N, 3, H, W), got {tuple(x.shape)}")
    if y is not None:
        y = _as_batch(y, model.dtype)
        if y.shape != x.shape:
            raise ArityError(f"x {tuple(x.shape)} and y {tuple(y.shape)} differ in shape")

    out = ForwardOutput(yhat=torch.empty(0), dhat=torch.empty(0))
    yhats, dhats = [], []
    for index, (name, planes) in enumerate(model.channel_groups):
        branch = model.branches[name]
        x_c = x[:, planes]
        d_c = sde_forward(x_c, branch)
        prior = prior_forward(x_c, d_c, branch)
        out.priors[name] = prior
        if mode == "train":
            posterior = encoder_forward(x_c, y[:, planes], d_c, branch)
            out.posteriors[name] = posterior
            z = reparameterize(posterior, torch_generator(noise_seed, index))
        else:
            z = reparameterize(prior, torch_generator(noise_seed, index))
        yhats.append(decoder_forward(x_c, z, d_c, branch))
        dhats.append(d_c)
    out.yhat = torch.cat(yhats, dim=1)
    out.dhat = torch.cat(dhats, dim=1)
    return out
