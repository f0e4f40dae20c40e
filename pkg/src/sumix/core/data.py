"""
Synthetic data, augmentation, occlusion and batching.

Random streams are keyed rather than shared: shuffling for an epoch uses
default_rng([seed, SHUFFLE_STREAM, epoch]) and augmentation of a batch uses
default_rng([seed, epoch, batch index, AUGMENT_STREAM]), so any batch can be
rebuilt without replaying the ones before it.
"""

import math
from typing import Iterator, Optional

import numpy as np
import torch
import torch.nn.functional as F
from matplotlib.colors import hsv_to_rgb

from .errors import DataError, InvalidParameterError
from .models import Batch, Dataset

CROP_PADDING = 4
AUGMENT_STREAM = 1
MIX_STREAM = 2
OCCLUSION_STREAM = 3
SHUFFLE_STREAM = 4


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent random stream for (seed, *keys)."""
    return np.random.default_rng([seed, *keys])


def synthetic_dataset(
    num_classes: int,
    per_class: int,
    height: int,
    width: int,
    rng: np.random.Generator,
    noise: float = 0.05,
) -> Dataset:
    """
    Colored Gaussian-blob classes.

    Class k has the fully saturated hue k/K. Each image is that color at half
    intensity everywhere, brightened by a Gaussian blob at a random position,
    plus pixel noise, clipped to [0, 1].

    Args:
        num_classes: K >= 2.
        per_class: Images per class.
        height: H.
        width: W.
        rng: Random stream.
        noise: Pixel noise standard deviation.

    Returns:
        A balanced Dataset, samples ordered by class.
    """
    if num_classes < 2:
        raise InvalidParameterError(f"A synthetic dataset needs at least 2 classes, got {num_classes}")
    colors = hsv_to_rgb(np.stack([
        np.arange(num_classes) / num_classes,
        np.full(num_classes, 0.9),
        np.full(num_classes, 0.9),
    ], axis=1))

    count = num_classes * per_class
    labels = np.repeat(np.arange(num_classes), per_class)
    centers_y = rng.uniform(0, height, size=count)
    centers_x = rng.uniform(0, width, size=count)
    sigma = max(height, width) / 6.0
    yy, xx = np.mgrid[0:height, 0:width]
    blobs = np.exp(-((yy[None] - centers_y[:, None, None]) ** 2
                     + (xx[None] - centers_x[:, None, None]) ** 2) / (2 * sigma ** 2))

    images = colors[labels][:, :, None, None] * (0.5 + 0.5 * blobs[:, None])
    images = images + noise * rng.standard_normal(images.shape)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return Dataset(
        images=torch.from_numpy(images),
        labels=torch.from_numpy(labels.astype(np.int64)),
        num_classes=num_classes,
        name="synthetic",
    )


def flip_and_crop(image: torch.Tensor, flip: bool, top: int, left: int,
                  padding: int = CROP_PADDING) -> torch.Tensor:
    """
    Optionally mirror horizontally, zero-pad, then crop back to the input size.

    Args:
        image: C×H×W image.
        flip: Mirror left-right first.
        top: Crop row in the padded image, 0..2*padding.
        left: Crop column in the padded image, 0..2*padding.
        padding: Zero border width.

    Returns:
        C×H×W image; (top, left) = (padding, padding) without flip is the identity.
    """
    _, h, w = image.shape
    if flip:
        image = torch.flip(image, dims=(2,))
    padded = F.pad(image, (padding, padding, padding, padding))
    return padded[:, top:top + h, left:left + w]


def basic_augment(image: torch.Tensor, rng: np.random.Generator,
                  padding: int = CROP_PADDING) -> torch.Tensor:
    """Random horizontal flip (p = 0.5) followed by a random crop of the zero-padded image."""
    flip = bool(rng.random() < 0.5)
    top, left = (int(v) for v in rng.integers(0, 2 * padding + 1, size=2))
    return flip_and_crop(image, flip, top, left, padding)


def augment_batch(images: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """basic_augment applied to every image of an N×C×H×W batch."""
    return torch.stack([basic_augment(img, rng) for img in images])


def occlude(
    images: torch.Tensor,
    ratio: float,
    patch: int = 16,
    rng: Optional[np.random.Generator] = None,
    fill: float = 0.0,
) -> torch.Tensor:
    """
    Blank out a fraction of the patches of every image.

    The grid is ceil(H/patch) × ceil(W/patch); border patches are clipped when
    H or W is not a multiple of patch. ceil(ratio * patches) patches are chosen
    per image uniformly without replacement.

    Args:
        images: N×C×H×W normalized batch.
        ratio: Fraction of patches to mask, in [0, 1].
        patch: Patch side in pixels.
        rng: Random stream for the patch choice.
        fill: Value written into masked patches (0 is the per-channel mean in normalized space).

    Returns:
        New tensor; unmasked pixels are untouched.
    """
    if not 0.0 <= ratio <= 1.0:
        raise InvalidParameterError(f"Occlusion ratio must lie in [0, 1], got {ratio}")
    if patch < 1:
        raise InvalidParameterError(f"Patch size must be >= 1, got {patch}")
    rng = rng if rng is not None else np.random.default_rng(0)

    out = images.clone()
    _, _, h, w = images.shape
    rows, cols = math.ceil(h / patch), math.ceil(w / patch)
    total = rows * cols
    count = min(math.ceil(ratio * total), total)
    if count == 0:
        return out
    for i in range(images.shape[0]):
        for index in rng.choice(total, size=count, replace=False):
            r, c = divmod(int(index), cols)
            out[i, :, r * patch:(r + 1) * patch, c * patch:(c + 1) * patch] = fill
    return out


def batches_per_epoch(size: int, batch_size: int) -> int:
    return math.ceil(size / batch_size)


def batch_iterator(
    dataset: Dataset,
    batch_size: int,
    shuffle_seed: int,
    epoch: int = 0,
    augment: bool = False,
    shuffle: bool = True,
    start_batch: int = 0,
) -> Iterator[Batch]:
    """
    One epoch of normalized batches with one-hot labels.

    Every sample appears exactly once; the last batch may be smaller.

    Args:
        dataset: Source dataset.
        batch_size: Samples per batch.
        shuffle_seed: Seed of the epoch-keyed shuffle and augmentation streams.
        epoch: Epoch index.
        augment: Apply basic_augment to the raw pixels before normalization.
        shuffle: Keep dataset order when False.
        start_batch: Skip the first batches (used when resuming mid-epoch).

    Yields:
        Batch objects.

    Raises:
        DataError: If the dataset is empty.
        InvalidParameterError: If batch_size < 1.
    """
    if batch_size < 1:
        raise InvalidParameterError(f"batch_size must be >= 1, got {batch_size}")
    if len(dataset) == 0:
        raise DataError(f"Dataset '{dataset.name}' is empty")

    order = stream(shuffle_seed, SHUFFLE_STREAM, epoch).permutation(len(dataset)) if shuffle else np.arange(len(dataset))
    order = torch.as_tensor(order, dtype=torch.long)
    for batch_index in range(start_batch, batches_per_epoch(len(dataset), batch_size)):
        indices = order[batch_index * batch_size:(batch_index + 1) * batch_size]
        images = dataset.images[indices]
        if augment:
            images = augment_batch(images, stream(shuffle_seed, epoch, batch_index, AUGMENT_STREAM))
        yield Batch(
            images=dataset.normalize(images),
            labels=F.one_hot(dataset.labels[indices], dataset.num_classes).to(torch.float32),
            indices=indices,
        )
