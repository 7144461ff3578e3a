"""Training and Monte-Carlo inference for CVID."""

from .inference import (
    BatchResult,
    DerainResult,
    InferenceConfig,
    derain,
    derain_batch,
    derain_sweep,
    list_jobs,
    resolve_model,
)
from .trainer import (
    EpochRecord,
    StepRecord,
    TrainConfig,
    TrainLog,
    compute_loss,
    load_training_set,
    train,
    validate,
)

__all__ = [
    "BatchResult",
    "DerainResult",
    "EpochRecord",
    "InferenceConfig",
    "StepRecord",
    "TrainConfig",
    "TrainLog",
    "compute_loss",
    "derain",
    "derain_batch",
    "derain_sweep",
    "list_jobs",
    "load_training_set",
    "resolve_model",
    "train",
    "validate",
]
