"""
Logging configuration for sumix runs.

Console output goes to stderr; stdout is reserved for the `key = value`
results and CSV rows the commands print. Once a command knows its run
directory, the same records are also written to <run_dir>/log.txt.
"""

import logging
import sys
from pathlib import Path
from typing import Optional

from .paths import OLD_LOG_FILE_NAME

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Third-party loggers that are chatty at INFO/DEBUG.
QUIET_LOGGERS = ("matplotlib", "PIL")


def rotate_log_files(log_file: Path) -> None:
    """
    Move an existing run log aside before a new session writes it.

    log.txt becomes log.old.txt, replacing any older copy, so a run directory
    that was resumed in place holds its last two sessions.

    Args:
        log_file: The log file about to be (re)opened.
    """
    if not log_file.exists():
        return
    old_log_file = log_file.with_name(OLD_LOG_FILE_NAME)
    try:
        log_file.replace(old_log_file)
    except OSError as e:
        # logging is not configured yet
        print(f"Warning: could not rotate {log_file}: {e}", file=sys.stderr)


def setup_logging(
    level: int = logging.INFO,
    log_file: Optional[Path] = None,
    format_string: Optional[str] = None,
    log_to_file: bool = True,
) -> None:
    """
    Configure the root logger for one command.

    Calling it again replaces the previous handlers, which is how a command
    moves from console-only logging to console plus run log.

    Args:
        level: Logging level (e.g., logging.DEBUG, logging.INFO).
        log_file: Run log, usually <run_dir>/log.txt.
        format_string: Optional custom format string for log messages.
        log_to_file: Whether to write log_file. Ignored when log_file is None.
    """
    formatter = logging.Formatter(format_string or LOG_FORMAT, datefmt=DATE_FORMAT)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    handlers: list[logging.Handler] = [console_handler]

    if log_to_file and log_file is not None:
        rotate_log_files(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8", mode="w")
        file_handler.setFormatter(formatter)
        handlers.append(file_handler)

    for handler in handlers:
        handler.setLevel(level)

    # force=True closes the handlers of the previous call
    logging.basicConfig(level=level, handlers=handlers, force=True)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger instance for a module.

    Args:
        name: Logger name (typically __name__).

    Returns:
        A logger that inherits the root configuration.
    """
    return logging.getLogger(name)
