"""Shared fixtures: small images, tiny networks and synthetic datasets."""

import numpy as np
import pytest
import torch

from cvid.core.dataset import build_dataset
from cvid.core.imaging import ImageTensor
from cvid.core.rain import RainParams
from cvid.core.scenes import write_scenes
from cvid.ml.networks import CVIDNet, NetworkConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_image(rng):
    def make(height=16, width=16, channels=3):
        return ImageTensor(rng.random((height, width, channels)))

    return make


@pytest.fixture
def tiny_config():
    return NetworkConfig(depth=2, filters=4, sde_layers=2)


@pytest.fixture
def tiny_model(tiny_config):
    return CVIDNet(tiny_config, seed=3).to(torch.float64)


@pytest.fixture
def scene_dir(tmp_path):
    write_scenes(tmp_path / "scenes", count=2, size=40, seed=7)
    return tmp_path / "scenes"


@pytest.fixture
def light_rain():
    return RainParams(streak_count=6, length_range=(4.0, 10.0), seed=11)


@pytest.fixture
def tiny_dataset(tmp_path, scene_dir, light_rain):
    return build_dataset(scene_dir, light_rain, count=4, patch_size=16, out_dir=tmp_path / "data")
