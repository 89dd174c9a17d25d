"""
Shared fixtures: tiny synthetic datasets, toy classifiers and a double
precision trigger small enough for finite-difference checks.
"""

import pytest
import torch

from revoke_bd.attack.trigger import TriggerGenerator
from revoke_bd.config import DatasetConfig, ExperimentConfig, TriggerConfig
from revoke_bd.data.datasets import load_dataset
from revoke_bd.models.generator import GeneratorNet

from .helpers import ToyClassifier


@pytest.fixture
def toy_classifier():
    torch.manual_seed(0)
    return ToyClassifier().double()


@pytest.fixture
def tiny_trigger():
    """base_channels=1 generator on 3x8x8 inputs (a few hundred parameters), no clamp."""
    torch.manual_seed(0)
    net = GeneratorNet(channels=3, base_channels=1)
    config = TriggerConfig(eta=0.08, mask_ratio=0.65, blur_kernel_size=3, sigma_mode='fixed')
    return TriggerGenerator(net, config, (3, 8, 8)).double()


@pytest.fixture
def synthetic_spec():
    return DatasetConfig(name='synthetic', image_shape=[3, 16, 16], train_limit=None,
                         mean=[0.5, 0.5, 0.5], std=[0.25, 0.25, 0.25], augment_rotation=0.0,
                         synthetic_train_size=400, synthetic_test_size=200)


@pytest.fixture
def synthetic_dataset(synthetic_spec):
    return load_dataset(synthetic_spec, seed=0)


@pytest.fixture
def smoke_config(tmp_path, monkeypatch):
    for var in ('REVOKE_BD_DATA', 'REVOKE_BD_DEVICE', 'REVOKE_BD_OUTPUT'):
        monkeypatch.delenv(var, raising=False)
    config = ExperimentConfig.from_preset('smoke')
    config.output_dir = str(tmp_path / 'run')
    config.device = 'cpu'
    return config
