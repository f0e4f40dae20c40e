"""
Run configuration and config-file handling.

This module provides the validated configuration models used by the mixers,
the encoder and the training loop, plus the plain-text config format:

    # comment
    method = cutmix
    alpha = 0.2
    widths = 32,64

Values are resolved in order defaults -> preset -> config file -> command-line flags,
later sources winning. The resolved configuration is echoed in the same
format so that re-feeding the echo reproduces the run.

Example:
    from sumix.config.settings import load_config_file, resolve_config, dump_config

    values = load_config_file(Path("run.cfg"))
    config = resolve_config(preset="cifar100-cutmix-sumix", file_values=values,
                            flag_values={"epochs": "5"})
    print(dump_config(config))
"""

import logging
import re
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from ..core.errors import ConfigError
from ..core.models import Architecture, DatasetKind, LossMode, MixMethod

logger = logging.getLogger(__name__)

DEFAULT_ZETA = 0.5
"""Regularizer weight used when no preset applies."""

# "#" opens a comment at the start of a line or after whitespace; "/data/run#2" is a value
COMMENT_PATTERN = re.compile(r"(^|\s)#.*$")


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        value = value.strip()
        if not value:
            return None
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    @field_validator("*", mode="before")
    @classmethod
    def _empty_is_unset(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip() == "":
            return None
        return value


class MixConfig(_Strict):
    """Mixer settings."""

    method: MixMethod = MixMethod.CUTMIX
    alpha: float = 0.2
    fmix_decay: float = 3.0
    seed: int = 0

    @field_validator("alpha", "fmix_decay")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("seed")
    @classmethod
    def _unsigned(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must be >= 0")
        return value


class EncoderConfig(_Strict):
    """
    Encoder settings.

    widths are the hidden widths: the first stages of small_cnn, or the hidden
    layers of mlp. The final stage / feature layer always has feature_dim units.
    """

    arch: Architecture = Architecture.SMALL_CNN
    feature_dim: int = 128
    num_classes: int = 10
    widths: tuple[int, ...] = (32, 64)
    in_channels: int = 3
    height: int = 32
    width: int = 32

    @field_validator("widths", mode="before")
    @classmethod
    def _parse_widths(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("feature_dim")
    @classmethod
    def _feature_dim(cls, value: int) -> int:
        if value < 2:
            raise ValueError("must be >= 2")
        return value

    @field_validator("num_classes")
    @classmethod
    def _num_classes(cls, value: int) -> int:
        if value < 2:
            raise ValueError("must be >= 2")
        return value

    @field_validator("widths")
    @classmethod
    def _widths(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or any(w < 1 for w in value):
            raise ValueError("must be a non-empty list of positive ints")
        return value

    @field_validator("in_channels", "height", "width")
    @classmethod
    def _dims(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.in_channels, self.height, self.width


class TrainConfig(_Strict):
    """Everything a training run needs. Flat so it maps one key per config line."""

    # optimisation
    epochs: int = 50
    batch_size: int = 100
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4

    # mixing and loss
    method: MixMethod = MixMethod.CUTMIX
    alpha: float = 0.2
    fmix_decay: float = 3.0
    zeta: float = DEFAULT_ZETA
    loss_mode: LossMode = LossMode.FULL_SU
    head_dim: int = 16

    # encoder
    arch: Architecture = Architecture.SMALL_CNN
    feature_dim: int = 128
    widths: tuple[int, ...] = (32, 64)

    # data
    dataset: DatasetKind = DatasetKind.SYNTHETIC
    data_path: Optional[Path] = None
    num_classes_subset: Optional[int] = None
    per_class: Optional[int] = None
    synthetic_classes: int = 4
    synthetic_per_class: int = 100
    synthetic_size: int = 32
    synthetic_noise: float = 0.05
    holdout_fraction: float = 0.2
    augment: bool = True
    prefetch: int = 0

    # bookkeeping
    seed: int = 0
    deterministic: bool = True
    eval_interval: int = 1
    checkpoint_path: Optional[Path] = None
    resume_from: Optional[Path] = None
    log_level: str = "INFO"

    @field_validator("widths", mode="before")
    @classmethod
    def _parse_widths(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("base_lr", "alpha", "fmix_decay", "zeta", "synthetic_noise")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("epochs", "batch_size", "eval_interval", "head_dim", "synthetic_size")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("momentum")
    @classmethod
    def _momentum(cls, value: float) -> float:
        if not 0 <= value < 1:
            raise ValueError("must lie in [0, 1)")
        return value

    @field_validator("weight_decay", "prefetch", "seed")
    @classmethod
    def _non_negative(cls, value):
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @field_validator("num_classes_subset", "per_class")
    @classmethod
    def _optional_positive(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("must be >= 1 when set")
        return value

    @field_validator("holdout_fraction")
    @classmethod
    def _fraction(cls, value: float) -> float:
        if not 0 <= value < 1:
            raise ValueError("must lie in [0, 1)")
        return value

    @field_validator("log_level")
    @classmethod
    def _log_level(cls, value: str) -> str:
        value = value.upper()
        if value not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {value}")
        return value

    @model_validator(mode="after")
    def _check_dims(self) -> "TrainConfig":
        if self.head_dim < 2:
            raise ValueError("head_dim must be >= 2")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if self.synthetic_classes < 2:
            raise ValueError("synthetic_classes must be >= 2")
        if self.dataset is not DatasetKind.SYNTHETIC and self.data_path is None:
            raise ValueError("data_path is required unless dataset = synthetic")
        return self

    def mix_config(self) -> MixConfig:
        """Mixer settings of this run."""
        return MixConfig(method=self.method, alpha=self.alpha, fmix_decay=self.fmix_decay, seed=self.seed)

    def encoder_config(self, num_classes: int, input_shape: tuple[int, int, int]) -> EncoderConfig:
        """Encoder settings of this run for a dataset of the given geometry."""
        c, h, w = input_shape
        return EncoderConfig(
            arch=self.arch, feature_dim=self.feature_dim, num_classes=num_classes,
            widths=self.widths, in_channels=c, height=h, width=w,
        )


def _raise_config_error(error: ValidationError, model: type[BaseModel]) -> None:
    fields = []
    messages = []
    for item in error.errors():
        name = ".".join(str(p) for p in item["loc"])
        if not name:
            # model-level checks name the field at the start of their message
            mentioned = sorted((item["msg"].find(f), f) for f in model.model_fields if f in item["msg"])
            name = mentioned[0][1] if mentioned else "config"
        fields.append(name)
        messages.append(f"{name}: {item['msg']}")
    raise ConfigError("Invalid configuration: " + "; ".join(messages), fields=fields) from error


def build_config(model: type[BaseModel], values: dict[str, Any]):
    """
    Validate raw values into a config model.

    Args:
        model: The pydantic model class (TrainConfig, MixConfig, EncoderConfig).
        values: Raw values, possibly strings from a config file.

    Returns:
        The validated model instance.

    Raises:
        ConfigError: Naming every invalid or unknown field.
    """
    try:
        return model(**values)
    except ValidationError as e:
        _raise_config_error(e, model)


def parse_config_text(text: str, source: str = "<text>") -> dict[str, str]:
    """
    Parse `key = value` lines.

    Args:
        text: Config file contents.
        source: Name used in error messages.

    Returns:
        Mapping of keys to raw string values.

    Raises:
        ConfigError: If a non-comment line has no '='.
    """
    values: dict[str, str] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = COMMENT_PATTERN.sub("", raw_line).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {raw_line!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key in values:
            logger.warning(f"{source}:{line_no}: '{key}' given twice, keeping the last value")
        values[key] = value.strip()
    return values


def load_config_file(path: Path) -> dict[str, str]:
    """
    Read a config file.

    Args:
        path: Path to a `key = value` file.

    Returns:
        Raw values keyed by field name.

    Raises:
        ConfigError: If the file does not exist or is malformed.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}", fields=["config"])
    with open(path, 'r', encoding='utf-8') as f:
        values = parse_config_text(f.read(), source=str(path))
    logger.info(f"Config loaded from {path} ({len(values)} keys)")
    return values


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if hasattr(value, "value"):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    return str(value).replace("\\", "/")


def dump_config(config: BaseModel) -> str:
    """
    Serialize a config model in the `key = value` format.

    Args:
        config: Validated configuration.

    Returns:
        Text that parse_config_text() turns back into an equal config.
    """
    lines = [f"# resolved {type(config).__name__}"]
    for name in type(config).model_fields:
        lines.append(f"{name} = {_format_value(getattr(config, name))}")
    return "\n".join(lines) + "\n"


def save_config(config: BaseModel, path: Path) -> None:
    """
    Write the config echo atomically.

    Args:
        config: Configuration to write.
        path: Destination file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_suffix('.tmp')
    with open(temp_file, 'w', encoding='utf-8') as f:
        f.write(dump_config(config))
    temp_file.replace(path)
    logger.info(f"Config saved to {path}")


def resolve_config(
    preset: Optional[str] = None,
    file_values: Optional[dict[str, Any]] = None,
    flag_values: Optional[dict[str, Any]] = None,
    defaults: Optional[dict[str, Any]] = None,
) -> TrainConfig:
    """
    Merge preset, config file and flags into a TrainConfig.

    Args:
        preset: Optional preset name from the registry.
        file_values: Values read from a config file.
        flag_values: Values given on the command line (None entries are ignored).
        defaults: Lowest-priority values, e.g. the config stored in a checkpoint.

    Returns:
        The validated TrainConfig.

    Raises:
        ConfigError: On unknown presets, unknown keys or invalid values.
    """
    from .presets import get_preset

    values: dict[str, Any] = dict(defaults or {})
    if preset:
        values.update(get_preset(preset).overrides)
    values.update(file_values or {})
    values.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    return build_config(TrainConfig, values)
