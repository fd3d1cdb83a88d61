import numpy as np
import pytest
import torch

from dualstyle.config import ExperimentConfig
from dualstyle.nets import build_bundle

torch.set_num_threads(1)


def tiny_config(**overrides) -> ExperimentConfig:
    """8x8 images, 4 code channels, 4-dim noise, 2 attributes."""
    base = dict(
        image_size=8,
        attr_names=["a", "b"],
        code_downsample=4,
        code_channels=4,
        noise_dim=4,
        base_channels=8,
        map_hidden=16,
        spade_hidden=8,
        critic_channels=8,
        batch_size=3,
        n_train=8,
        n_test=4,
        steps=3,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_bundle(tiny_cfg):
    return build_bundle(tiny_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_images(rng, batch, size, dtype=torch.float32):
    return torch.as_tensor(
        rng.uniform(-1, 1, size=(batch, 3, size, size)), dtype=dtype)
