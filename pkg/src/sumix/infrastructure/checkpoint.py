"""
Checkpoint container.

Checkpoints are safetensors files. Tensor names are prefixed by role:
    model.<state key>       encoder parameters and buffers
    head.<state key>        uncertainty head
    velocity.<index>        momentum buffer of the index-th optimized parameter
    data.mean, data.std     normalization stats of the training split

String metadata carries format_version, the resolved config echo, epoch,
step, seed and the evaluation history (JSON).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
from safetensors import safe_open
from safetensors.torch import save_file

from ..core.errors import DataError
from .logging_config import get_logger

logger = get_logger(__name__)

FORMAT_VERSION = "1"


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run."""

    model_state: dict[str, torch.Tensor]
    head_state: dict[str, torch.Tensor]
    velocity: list[Optional[torch.Tensor]]
    """Momentum buffers in optimizer parameter order; None where no step was taken."""

    mean: torch.Tensor
    std: torch.Tensor
    epoch: int = 0
    """Completed epochs."""

    step: int = 0
    """Completed optimizer steps."""

    seed: int = 0
    config_text: str = ""
    """Resolved config in `key = value` form."""

    history: list[dict] = field(default_factory=list)
    """Evaluation records so far."""


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    """
    Write a checkpoint atomically.

    Args:
        path: Destination .safetensors file.
        checkpoint: Content.

    Returns:
        The written path.
    """
    path = Path(path)
    tensors: dict[str, torch.Tensor] = {}
    for key, value in checkpoint.model_state.items():
        tensors[f"model.{key}"] = value.detach().cpu().contiguous().clone()
    for key, value in checkpoint.head_state.items():
        tensors[f"head.{key}"] = value.detach().cpu().contiguous().clone()
    for index, buffer in enumerate(checkpoint.velocity):
        if buffer is not None:
            tensors[f"velocity.{index}"] = buffer.detach().cpu().contiguous().clone()
    tensors["data.mean"] = checkpoint.mean.detach().cpu().contiguous().clone()
    tensors["data.std"] = checkpoint.std.detach().cpu().contiguous().clone()

    metadata = {
        "format_version": FORMAT_VERSION,
        "epoch": str(checkpoint.epoch),
        "step": str(checkpoint.step),
        "seed": str(checkpoint.seed),
        "velocity_count": str(len(checkpoint.velocity)),
        "config": checkpoint.config_text,
        "history": json.dumps(checkpoint.history),
    }

    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_suffix('.tmp')
    save_file(tensors, str(temp_file), metadata=metadata)
    temp_file.replace(path)
    logger.info(f"Checkpoint saved to {path} (epoch {checkpoint.epoch}, step {checkpoint.step})")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint().

    Raises:
        FileNotFoundError: If the file does not exist.
        DataError: If the file is not a checkpoint of a known format version.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")

    try:
        with safe_open(str(path), framework="pt") as f:
            metadata = f.metadata() or {}
            tensors = {key: f.get_tensor(key) for key in f.keys()}
    except Exception as e:
        raise DataError(f"Not a readable checkpoint: {path} ({e})") from e
    if metadata.get("format_version") != FORMAT_VERSION:
        raise DataError(f"Unsupported checkpoint format {metadata.get('format_version')!r}: {path}")

    def _section(prefix: str) -> dict[str, torch.Tensor]:
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    velocity_count = int(metadata["velocity_count"])
    velocity = [tensors.get(f"velocity.{i}") for i in range(velocity_count)]
    checkpoint = Checkpoint(
        model_state=_section("model."),
        head_state=_section("head."),
        velocity=velocity,
        mean=tensors["data.mean"],
        std=tensors["data.std"],
        epoch=int(metadata["epoch"]),
        step=int(metadata["step"]),
        seed=int(metadata["seed"]),
        config_text=metadata.get("config", ""),
        history=json.loads(metadata.get("history", "[]")),
    )
    logger.info(f"Checkpoint loaded from {path} (epoch {checkpoint.epoch}, step {checkpoint.step})")
    return checkpoint
