"""
Run artifacts: the metrics stream, CSV tables, PNG images and plots.

The metrics stream is one JSON object per line, each with a `kind` field
('step' or 'eval'). It is flushed after every record so a crashed run keeps
everything written up to the crash.
"""

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch
from PIL import Image

from .logging_config import get_logger

logger = get_logger(__name__)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class MetricsWriter:
    """Append-only JSON-lines writer."""

    def __init__(self, path: Path, append: bool = False):
        """
        Open the stream.

        Args:
            path: Target file, usually <run_dir>/metrics.jsonl.
            append: Continue an existing stream (resume) instead of truncating it.
        """
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, 'a' if append else 'w', encoding='utf-8')
        self.records_written = 0

    def write(self, kind: str, record: dict) -> None:
        """Write one record tagged with its kind."""
        payload = {"kind": kind, **{k: _json_value(v) for k, v in record.items()}}
        self._file.write(json.dumps(payload, sort_keys=False) + "\n")
        self._file.flush()
        self.records_written += 1

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def read_metrics(path: Path, kind: Optional[str] = None) -> list[dict]:
    """Read a metrics stream, optionally keeping one kind of record."""
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                if kind is None or record.get("kind") == kind:
                    records.append(record)
    return records


def write_csv(path: Path, rows: Sequence[dict], fieldnames: Optional[Sequence[str]] = None) -> Path:
    """
    Write rows as a comma-separated table with a header.

    Args:
        path: Destination file.
        rows: Row dictionaries.
        fieldnames: Column order; keys of the first row when omitted.

    Returns:
        The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    temp_file = path.with_suffix('.tmp')
    with open(temp_file, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        writer.writerows(rows)
    temp_file.replace(path)
    logger.info(f"Table written to {path} ({len(rows)} rows)")
    return path


def write_key_values(path: Path, records: Iterable[dict]) -> Path:
    """Write records as `key = value` lines, a blank line between records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks = ["\n".join(f"{k} = {v}" for k, v in record.items()) for record in records]
    path.write_text("\n\n".join(blocks) + "\n", encoding='utf-8')
    return path


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """C×H×W (or H×W) tensor in [0, 1] to an H×W×C (or H×W) byte array."""
    array = image.detach().cpu().to(torch.float64).clamp(0, 1).numpy()
    if array.ndim == 3:
        array = np.transpose(array, (1, 2, 0))
        if array.shape[2] == 1:
            array = array[:, :, 0]
    return np.rint(array * 255.0).astype(np.uint8)


def save_png(path: Path, image) -> Path:
    """Save a [0, 1] tensor or a byte array as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = to_uint8(image) if torch.is_tensor(image) else np.asarray(image, dtype=np.uint8)
    Image.fromarray(array).save(path)
    return path


def _as_rgb(image: torch.Tensor) -> torch.Tensor:
    if image.ndim == 2:
        image = image.unsqueeze(0)
    if image.shape[0] == 1:
        image = image.expand(3, -1, -1)
    return image


def image_grid(rows: Sequence[Sequence[torch.Tensor]], padding: int = 2) -> np.ndarray:
    """
    Tile images into one RGB byte array.

    Args:
        rows: Rows of C×H×W or H×W tensors in [0, 1], all of the same H×W.
        padding: White pixels between tiles.

    Returns:
        H'×W'×3 uint8 array.
    """
    tiles = [[to_uint8(_as_rgb(img)) for img in row] for row in rows]
    h, w = tiles[0][0].shape[:2]
    n_rows, n_cols = len(tiles), max(len(row) for row in tiles)
    canvas = np.full((n_rows * (h + padding) + padding, n_cols * (w + padding) + padding, 3), 255, np.uint8)
    for r, row in enumerate(tiles):
        for c, tile in enumerate(row):
            top, left = padding + r * (h + padding), padding + c * (w + padding)
            canvas[top:top + h, left:left + w] = tile
    return canvas


def cam_overlay(image: torch.Tensor, heat: torch.Tensor, alpha: float = 0.5) -> np.ndarray:
    """
    Blend a jet-colored heat map over an RGB image.

    Args:
        image: C×H×W de-normalized image in [0, 1].
        heat: H×W map in [0, 1].
        alpha: Heat-map opacity.

    Returns:
        H×W×3 uint8 array.
    """
    colored = matplotlib.colormaps["jet"](heat.detach().cpu().numpy())[:, :, :3]
    base = to_uint8(_as_rgb(image)).astype(np.float64) / 255.0
    blended = (1.0 - alpha) * base + alpha * colored
    return np.rint(np.clip(blended, 0, 1) * 255.0).astype(np.uint8)


def plot_curve(
    path: Path,
    x: Sequence[float],
    series: dict[str, Sequence[float]],
    xlabel: str,
    ylabel: str,
    title: str = "",
) -> Path:
    """Line plot of one or more series sharing x values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, values in series.items():
        ax.plot(list(x), list(values), marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Plot written to {path}")
    return path
