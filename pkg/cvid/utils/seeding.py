"""Seed derivation for reproducible numpy and torch random streams.

Every random stream in CVID is keyed by a tuple of non-negative integers
(base seed, entry index, channel, sample index, ...). Deriving child seeds
through ``numpy.random.SeedSequence`` means a stream never depends on how
many draws some other stream made, so parallel and serial runs agree.
"""

from __future__ import annotations

import numpy as np
import torch

SEED_MASK = 2**64 - 1


def derive_seed(*keys: int) -> int:
    """Collapse a key tuple into one 64-bit seed."""
    entropy = [int(k) & SEED_MASK for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, np.uint32)
    return (int(state[0]) << 32) | int(state[1])


def numpy_rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & SEED_MASK for k in keys]))


def torch_generator(*keys: int, device: str = "cpu") -> torch.Generator:
    gen = torch.Generator(device=device)
    gen.manual_seed(derive_seed(*keys))
    return gen
