"""Exception hierarchy shared by every CVID module.

Each concrete error also derives from the closest builtin so callers that
only know about ``ValueError``/``OSError``/``RuntimeError`` still catch it.
"""

from __future__ import annotations

from typing import Optional


class CvidError(Exception):
    """Base class for all CVID failures."""


class ImageIOError(CvidError, OSError):
    """A raster file could not be read or written."""


class ImageFormatError(CvidError, ValueError):
    """Unsupported raster format, bit depth or pixel mode."""


class ArityError(CvidError, ValueError):
    """Shape, channel-count or batch-size mismatch."""


class BoundsError(CvidError, ValueError):
    """A patch or crop falls outside the image it is taken from."""


class ConfigurationError(CvidError, ValueError):
    """Invalid configuration, empty inputs or incomplete manifests."""


class DomainError(CvidError, ValueError):
    """A numeric argument lies outside the domain of the operation."""


class ContractError(CvidError, ValueError):
    """A call violates the calling contract of an operation."""


class PreconditionError(CvidError, ValueError):
    """The premise of a checked property does not hold for the inputs."""


class CheckpointError(CvidError, RuntimeError):
    """A checkpoint file is missing, corrupt or incompatible."""


class TrainingDivergedError(CvidError, RuntimeError):
    """The training objective became non-finite."""

    def __init__(self, step: int, last_finite_step: Optional[int], value: float):
        self.step = step
        self.last_finite_step = last_finite_step
        self.value = value
        last = "none" if last_finite_step is None else str(last_finite_step)
        super().__init__(
            f"training diverged at step {step} (loss={value}); last finite step: {last}"
        )
