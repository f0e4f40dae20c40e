"""
Path utilities and constants.

This module defines the run-directory layout and resolves where runs live.

Run directory layout:
    <run_root>/<run_name>/
        config.txt          resolved configuration echo
        metrics.jsonl       structured metrics stream
        log.txt             human-readable log (log.old.txt after a resume)
        checkpoints/        epoch-XXXX.safetensors, last.safetensors
        images/             previews, CAM overlays, plots
        tables/             CSV reports
"""

import os
from datetime import datetime
from pathlib import Path
from typing import Optional

RUN_ROOT_ENV_VAR = "SUMIX_RUN_ROOT"
DEFAULT_RUN_ROOT = "runs"

CONFIG_FILE_NAME = "config.txt"
METRICS_FILE_NAME = "metrics.jsonl"
LOG_FILE_NAME = "log.txt"
OLD_LOG_FILE_NAME = "log.old.txt"
CHECKPOINT_DIR_NAME = "checkpoints"
IMAGES_DIR_NAME = "images"
TABLES_DIR_NAME = "tables"
LAST_CHECKPOINT_NAME = "last.safetensors"


def ensure_directory(path: Path) -> Path:
    """
    Ensure a directory exists, creating it if necessary.

    Args:
        path: Path to the directory.

    Returns:
        The path (for chaining).

    Raises:
        IOError: If directory cannot be created.
    """
    try:
        path.mkdir(parents=True, exist_ok=True)
        return path
    except OSError as e:
        raise IOError(f"Failed to create directory {path}: {e}")


def get_run_root() -> Path:
    """
    Get the directory under which run directories are created.

    Returns:
        $SUMIX_RUN_ROOT if set, otherwise ./runs.
    """
    return Path(os.environ.get(RUN_ROOT_ENV_VAR) or DEFAULT_RUN_ROOT)


def create_run_directory(command: str, run_name: Optional[str] = None, root: Optional[Path] = None) -> Path:
    """
    Create a fresh run directory.

    Args:
        command: Subcommand name, used as prefix of generated names.
        run_name: Explicit directory name. Reused as-is if it already exists.
        root: Run root; defaults to get_run_root().

    Returns:
        Path to the run directory.
    """
    root = Path(root) if root is not None else get_run_root()
    if run_name is None:
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        run_name = f"{command}-{stamp}"
        candidate = root / run_name
        suffix = 1
        while candidate.exists():
            candidate = root / f"{run_name}-{suffix}"
            suffix += 1
        run_name = candidate.name
    return ensure_directory(root / run_name)


def get_checkpoint_directory(run_dir: Path) -> Path:
    """Checkpoint directory of a run (created on demand)."""
    return ensure_directory(run_dir / CHECKPOINT_DIR_NAME)


def get_images_directory(run_dir: Path) -> Path:
    """Image directory of a run (created on demand)."""
    return ensure_directory(run_dir / IMAGES_DIR_NAME)


def get_tables_directory(run_dir: Path) -> Path:
    """Table directory of a run (created on demand)."""
    return ensure_directory(run_dir / TABLES_DIR_NAME)


def epoch_checkpoint_name(epoch: int) -> str:
    """File name of the checkpoint written after an epoch."""
    return f"epoch-{epoch:04d}.safetensors"
