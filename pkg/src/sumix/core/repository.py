"""
Repository for the datasets a run trains and evaluates on.

This module hides where images come from (CIFAR record files or the
synthetic generator) and how the training and held-out splits are formed.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ..config.settings import TrainConfig
from ..infrastructure.cifar_loader import SPLIT_FILES, load_cifar
from ..infrastructure.logging_config import get_logger
from .data import stream, synthetic_dataset
from .errors import DataError, InvalidParameterError
from .models import Dataset, DatasetKind

logger = get_logger(__name__)

DATA_STREAM = 10
SPLIT_STREAM = 11
SUBSET_STREAM = 12


@dataclass
class DataSplits:
    """Training and held-out evaluation data sharing the training stats."""

    train: Dataset
    test: Dataset


def restrict_classes(
    dataset: Dataset,
    classes: Sequence[int],
    per_class: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Dataset:
    """
    Keep only some classes and relabel them 0..len(classes)-1.

    Args:
        dataset: Source dataset.
        classes: Original class indices to keep, in the new label order.
        per_class: Optional cap on samples per class (random choice when rng is given, first ones otherwise).
        rng: Random stream for the per-class choice.

    Returns:
        A dataset with len(classes) classes; stats are recomputed.

    Raises:
        InvalidParameterError: On fewer than two or duplicated classes.
    """
    classes = [int(c) for c in classes]
    if len(classes) < 2 or len(set(classes)) != len(classes):
        raise InvalidParameterError(f"Need at least two distinct classes, got {classes}")

    labels = dataset.labels.numpy()
    keep = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        if per_class is not None and len(members) > per_class:
            members = np.sort(rng.choice(members, size=per_class, replace=False)) if rng is not None \
                else members[:per_class]
        keep.append(members)
    index = torch.as_tensor(np.sort(np.concatenate(keep)), dtype=torch.long)

    remap = torch.full((dataset.num_classes,), -1, dtype=torch.long)
    remap[torch.as_tensor(classes)] = torch.arange(len(classes))
    return Dataset(
        images=dataset.images[index],
        labels=remap[dataset.labels[index]],
        num_classes=len(classes),
        name=f"{dataset.name}[{len(classes)} classes]",
    )


def split_holdout(dataset: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """
    Split off a stratified held-out part.

    Args:
        dataset: Source dataset.
        fraction: Share of every class moved to the held-out part.
        rng: Random stream.

    Returns:
        (train, holdout); the held-out part carries the training stats.
    """
    labels = dataset.labels.numpy()
    held = []
    for c in range(dataset.num_classes):
        members = rng.permutation(np.flatnonzero(labels == c))
        held.append(members[:int(round(fraction * len(members)))])
    held_index = np.sort(np.concatenate(held)) if held else np.array([], dtype=np.int64)
    train_index = np.setdiff1d(np.arange(len(dataset)), held_index)

    train = Dataset(dataset.images[torch.as_tensor(train_index)], dataset.labels[torch.as_tensor(train_index)],
                    dataset.num_classes, name=f"{dataset.name}/train")
    holdout = Dataset(dataset.images[torch.as_tensor(held_index, dtype=torch.long)],
                      dataset.labels[torch.as_tensor(held_index, dtype=torch.long)],
                      dataset.num_classes, train.mean.clone(), train.std.clone(), name=f"{dataset.name}/holdout")
    return train, holdout


class DatasetRepository:
    """
    Loads the data of a run as described by its TrainConfig.

    Synthetic data is generated from the run seed; CIFAR data is read from
    config.data_path (a directory with the standard split files, or a single
    record file). A held-out split is cut from the training data whenever no
    test file is available.
    """

    def __init__(self, config: TrainConfig):
        """
        Initialize the repository.

        Args:
            config: Run configuration.

        Raises:
            FileNotFoundError: If config.data_path does not exist.
        """
        self.config = config
        self._splits: Optional[DataSplits] = None
        if config.dataset is not DatasetKind.SYNTHETIC and not Path(config.data_path).exists():
            raise FileNotFoundError(f"Dataset path does not exist: {config.data_path}")

    def load(self, progress_callback: Optional[Callable[[int, int, str], None]] = None) -> DataSplits:
        """
        Load, restrict and split the data.

        Args:
            progress_callback: Optional callback function(current, total, message).

        Returns:
            DataSplits whose test part is normalized with the training stats.

        Raises:
            DataError: If the resulting training set is empty.
        """
        config = self.config
        if progress_callback:
            progress_callback(0, 3, "Reading data")

        test: Optional[Dataset] = None
        if config.dataset is DatasetKind.SYNTHETIC:
            full = synthetic_dataset(
                config.synthetic_classes, config.synthetic_per_class,
                config.synthetic_size, config.synthetic_size,
                stream(config.seed, DATA_STREAM), noise=config.synthetic_noise,
            )
        else:
            path = Path(config.data_path)
            full = load_cifar(path, config.dataset, split="train")
            if path.is_dir() and all((path / name).exists() for name in SPLIT_FILES[config.dataset]["test"]):
                test = load_cifar(path, config.dataset, split="test")

        if progress_callback:
            progress_callback(1, 3, "Selecting classes")
        if config.num_classes_subset is not None or config.per_class is not None:
            classes = list(range(config.num_classes_subset or full.num_classes))
            rng = stream(config.seed, SUBSET_STREAM)
            full = restrict_classes(full, classes, config.per_class, rng)
            if test is not None:
                test = restrict_classes(test, classes)

        if progress_callback:
            progress_callback(2, 3, "Splitting")
        if test is None:
            train, test = split_holdout(full, config.holdout_fraction, stream(config.seed, SPLIT_STREAM))
        else:
            train = full
            test = test.with_stats(train.mean, train.std)

        if len(train) == 0:
            raise DataError(f"Training split of '{full.name}' is empty")
        self._splits = DataSplits(train=train, test=test)

        if progress_callback:
            progress_callback(3, 3, "Done")
        logger.info(
            f"Loaded {train.name}: {len(train)} training / {len(test)} held-out images, "
            f"{train.num_classes} classes, shape {train.image_shape}"
        )
        return self._splits

    def get_splits(self) -> Optional[DataSplits]:
        """The splits from the last load(), or None."""
        return self._splits
