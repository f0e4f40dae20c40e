"""
CIFAR binary record files and corruption manifests.

Record layout (one record per image, no header):
    cifar10     1 label byte + 3072 pixel bytes
    cifar100    1 coarse label byte + 1 fine label byte + 3072 pixel bytes

Pixels are three row-major 32×32 planes (R, G, B). The same layout is used to
persist any 3×32×32 dataset, synthetic ones included.

A corruption manifest lists one `name path` pair per line; relative paths are
resolved against the manifest's directory and `#` starts a comment.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..core.errors import DataError, DataFormatError, ShapeMismatchError
from ..core.models import Dataset, DatasetKind
from .logging_config import get_logger

logger = get_logger(__name__)

IMAGE_SHAPE = (3, 32, 32)
PIXEL_BYTES = 3 * 32 * 32

LABEL_BYTES = {DatasetKind.CIFAR10: 1, DatasetKind.CIFAR100: 2}
NUM_CLASSES = {DatasetKind.CIFAR10: 10, DatasetKind.CIFAR100: 100}
NUM_COARSE_CLASSES = 20

SPLIT_FILES = {
    DatasetKind.CIFAR10: {
        "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
        "test": ["test_batch.bin"],
    },
    DatasetKind.CIFAR100: {
        "train": ["train.bin"],
        "test": ["test.bin"],
    },
}


def record_length(variant: DatasetKind) -> int:
    """Bytes per record: 3073 for cifar10, 3074 for cifar100."""
    return LABEL_BYTES[DatasetKind(variant)] + PIXEL_BYTES


def _variant(variant) -> DatasetKind:
    variant = DatasetKind(variant)
    if variant not in LABEL_BYTES:
        raise DataError(f"'{variant.value}' has no binary record format")
    return variant


def _read_records(path: Path, variant: DatasetKind) -> tuple[np.ndarray, np.ndarray]:
    length = record_length(variant)
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        raise DataFormatError("Empty record file", path, 0)
    if raw.size % length:
        raise DataFormatError(
            f"Truncated record: {raw.size} bytes is not a multiple of {length}",
            path, (raw.size // length) * length,
        )
    records = raw.reshape(-1, length)
    labels = records[:, LABEL_BYTES[variant] - 1].astype(np.int64)

    limit = NUM_CLASSES[variant]
    bad = np.flatnonzero(labels >= limit)
    if variant is DatasetKind.CIFAR100:
        bad = np.union1d(bad, np.flatnonzero(records[:, 0] >= NUM_COARSE_CLASSES))
    if bad.size:
        raise DataFormatError(f"Label out of range in record {int(bad[0])}", path, int(bad[0]) * length)

    pixels = records[:, LABEL_BYTES[variant]:]
    return pixels, labels


def load_cifar(path: Path, variant, split: str = "train") -> Dataset:
    """
    Load CIFAR binary records.

    Args:
        path: A record file, or a directory holding the standard split files.
        variant: cifar10 or cifar100 (fine labels are used for cifar100).
        split: 'train' or 'test' when path is a directory.

    Returns:
        Dataset with pixels scaled to [0, 1] and stats computed from it.

    Raises:
        FileNotFoundError: If the path or an expected split file is missing.
        DataFormatError: On truncated files or out-of-range labels.
    """
    path = Path(path)
    variant = _variant(variant)
    if not path.exists():
        raise FileNotFoundError(f"Dataset path does not exist: {path}")

    if path.is_dir():
        try:
            names = SPLIT_FILES[variant][split]
        except KeyError:
            raise DataError(f"Unknown split '{split}', expected 'train' or 'test'") from None
        files = [path / name for name in names]
        missing = [f for f in files if not f.exists()]
        if missing:
            raise FileNotFoundError(f"Missing {variant.value} files: {', '.join(str(f) for f in missing)}")
    else:
        files = [path]

    pixel_parts, label_parts = [], []
    for file in files:
        pixels, labels = _read_records(file, variant)
        pixel_parts.append(pixels)
        label_parts.append(labels)
        logger.debug(f"Read {len(labels)} records from {file}")

    pixels = np.concatenate(pixel_parts)
    labels = np.concatenate(label_parts)
    images = torch.from_numpy(pixels.reshape(-1, *IMAGE_SHAPE).astype(np.float32) / 255.0)
    dataset = Dataset(
        images=images,
        labels=torch.from_numpy(labels),
        num_classes=NUM_CLASSES[variant],
        name=f"{variant.value}/{path.name if not path.is_dir() else split}",
    )
    logger.info(f"Loaded {len(dataset)} {variant.value} images from {path}")
    return dataset


def write_cifar(
    path: Path,
    dataset: Dataset,
    variant,
    coarse_labels: Optional[np.ndarray] = None,
) -> Path:
    """
    Persist a dataset in the binary record format.

    Pixels are rounded to the nearest byte, so data loaded by load_cifar()
    round-trips bit-exactly.

    Args:
        path: Destination file.
        dataset: 3×32×32 dataset.
        variant: Record layout.
        coarse_labels: cifar100 only; zeros when omitted.

    Returns:
        The written path.

    Raises:
        ShapeMismatchError: If the images are not 3×32×32.
        DataError: If labels do not fit the variant.
    """
    path = Path(path)
    variant = _variant(variant)
    if dataset.image_shape != IMAGE_SHAPE:
        raise ShapeMismatchError(f"Record format needs 3×32×32 images, got {dataset.image_shape}")
    if dataset.num_classes > NUM_CLASSES[variant]:
        raise DataError(f"{dataset.num_classes} classes do not fit the {variant.value} label byte")

    count = len(dataset)
    pixels = np.clip(np.rint(dataset.images.numpy() * 255.0), 0, 255).astype(np.uint8)
    records = np.empty((count, record_length(variant)), dtype=np.uint8)
    records[:, LABEL_BYTES[variant] - 1] = dataset.labels.numpy().astype(np.uint8)
    if variant is DatasetKind.CIFAR100:
        records[:, 0] = 0 if coarse_labels is None else np.asarray(coarse_labels, dtype=np.uint8)
    records[:, LABEL_BYTES[variant]:] = pixels.reshape(count, PIXEL_BYTES)

    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_suffix(path.suffix + '.tmp')
    records.tofile(temp_file)
    temp_file.replace(path)
    logger.info(f"Wrote {count} {variant.value} records to {path}")
    return path


@dataclass
class ManifestEntry:
    """One line of a corruption manifest."""

    line: int
    """1-based line number in the manifest."""

    name: str
    """Corruption name, e.g. 'gaussian_noise'."""

    path: Path
    """Record file with the corrupted images."""


def read_manifest(path: Path) -> list[ManifestEntry]:
    """
    Read a corruption manifest.

    Args:
        path: Manifest file.

    Returns:
        Entries in file order.

    Raises:
        FileNotFoundError: If the manifest itself is missing.
        DataError: On malformed lines, missing record files (naming the line)
            or a manifest without entries.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")

    entries = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, raw_line in enumerate(f, start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(maxsplit=1)
            if len(parts) != 2:
                raise DataError(f"{path}:{line_no}: expected 'name path'", line=line_no)
            name, file_name = parts
            file_path = Path(file_name.strip())
            if not file_path.is_absolute():
                file_path = path.parent / file_path
            if not file_path.exists():
                raise DataError(f"{path}:{line_no}: file for '{name}' not found: {file_path}", line=line_no)
            entries.append(ManifestEntry(line=line_no, name=name, path=file_path))

    if not entries:
        raise DataError(f"Manifest has no entries: {path}")
    logger.debug(f"Manifest {path} lists {len(entries)} corruptions")
    return entries
