"""Model checkpoints: the full parameter set plus network config and training metadata."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import torch

from ..core.errors import CheckpointError
from .networks import CVIDNet, NetworkConfig

CHECKPOINT_FORMAT = "cvid-checkpoint"
CHECKPOINT_VERSION = 1

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ModelCheckpoint:
    """Immutable snapshot; keys look like ``branches.G.prior.body.0.weight``."""

    state: Mapping[str, torch.Tensor]
    config: NetworkConfig = field(default_factory=NetworkConfig)
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(
        cls, model: CVIDNet, metadata: Optional[Mapping[str, Any]] = None
    ) -> "ModelCheckpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(state=state, config=model.config, metadata=dict(metadata or {}))

    @property
    def dtype(self) -> torch.dtype:
        for tensor in self.state.values():
            if tensor.is_floating_point():
                return tensor.dtype
        return torch.float32

    def to_model(self) -> CVIDNet:
        model = CVIDNet(self.config).to(self.dtype)
        try:
            model.load_state_dict(dict(self.state), strict=True)
        except RuntimeError as exc:
            raise CheckpointError(f"checkpoint does not match its network config: {exc}") from exc
        model.eval()
        return model

    def channel_state(self, channel: str) -> Dict[str, torch.Tensor]:
        prefix = f"branches.{channel}."
        return {k[len(prefix):]: v for k, v in self.state.items() if k.startswith(prefix)}

    def _payload(self) -> Dict[str, Any]:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "metadata": dict(self.metadata),
            "state": dict(self.state),
        }

    def save(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            torch.save(self._payload(), path)
        except OSError as exc:
            raise CheckpointError(f"could not write checkpoint {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path: PathLike) -> "ModelCheckpoint":
        path = Path(path)
        try:
            payload = torch.load(path, map_location="cpu", weights_only=True)
        except FileNotFoundError as exc:
            raise CheckpointError(f"checkpoint not found: {path}") from exc
        except Exception as exc:
            raise CheckpointError(f"could not read checkpoint {path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a CVID checkpoint")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {payload.get('version')}"
            )
        try:
            config = NetworkConfig.from_dict(payload["config"])
            state = dict(payload["state"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
        checkpoint = cls(state=state, config=config, metadata=dict(payload.get("metadata", {})))
        checkpoint.to_model()  # shape/key validation
        return checkpoint
