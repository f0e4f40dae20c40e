"""
Pytest configuration and shared fixtures.

This file contains pytest configuration and reusable test fixtures.
"""

from pathlib import Path

import numpy as np
import pytest
import torch

from src.sumix.config.settings import EncoderConfig, TrainConfig
from src.sumix.core.data import synthetic_dataset
from src.sumix.core.encoder import build_encoder
from src.sumix.core.models import Dataset
from src.sumix.core.repository import DataSplits, split_holdout
from src.sumix.core.sumix_loss import UncertaintyHead


@pytest.fixture(autouse=True)
def run_root(tmp_path: Path, monkeypatch) -> Path:
    """
    Point the run root at a temporary directory for every test.

    Returns:
        Path used as $SUMIX_RUN_ROOT.
    """
    root = tmp_path / "runs"
    monkeypatch.setenv("SUMIX_RUN_ROOT", str(root))
    return root


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset() -> Dataset:
    """
    Four colour classes of 8×8 images, 10 per class.

    Returns:
        A Dataset with 40 samples.
    """
    return synthetic_dataset(4, 10, 8, 8, np.random.default_rng(0))


@pytest.fixture
def tiny_splits(tiny_dataset: Dataset) -> DataSplits:
    train, test = split_holdout(tiny_dataset, 0.25, np.random.default_rng(1))
    return DataSplits(train=train, test=test)


@pytest.fixture
def mlp_config() -> EncoderConfig:
    return EncoderConfig(arch="mlp", feature_dim=6, num_classes=4, widths=(12,),
                         in_channels=3, height=4, width=4)


@pytest.fixture
def mlp64(mlp_config: EncoderConfig):
    """
    Double-precision mlp encoder and uncertainty head.

    Returns:
        (model, head) tuple.
    """
    model = build_encoder(mlp_config, np.random.default_rng(5)).double()
    head = UncertaintyHead(mlp_config.feature_dim, 5).double()
    torch.nn.init.normal_(head.linear.weight, std=0.5, generator=torch.Generator().manual_seed(6))
    return model, head


@pytest.fixture
def cnn_config() -> EncoderConfig:
    return EncoderConfig(arch="small_cnn", feature_dim=8, num_classes=4, widths=(4,),
                         in_channels=3, height=8, width=8)


@pytest.fixture
def smoke_config() -> TrainConfig:
    """
    A seconds-long synthetic run.

    Returns:
        TrainConfig on 4 classes × 20 images of 8×8 pixels.
    """
    return TrainConfig(
        dataset="synthetic", synthetic_classes=4, synthetic_per_class=20, synthetic_size=8,
        epochs=2, batch_size=16, base_lr=0.05, method="cutmix", alpha=1.0,
        arch="small_cnn", feature_dim=8, widths=(4,), head_dim=4, seed=3,
    )
