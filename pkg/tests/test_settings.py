"""
Tests for config parsing, validation, the config echo and value resolution.

Resolution order is defaults -> preset -> config file -> flags; the echo
written into every run directory must parse back to an equal config.
"""
from __future__ import annotations

from pathlib import Path

import pytest

from src.sumix.config.settings import (
    EncoderConfig, MixConfig, TrainConfig, build_config, dump_config, load_config_file,
    parse_config_text, resolve_config, save_config,
)
from src.sumix.core.errors import ConfigError
from src.sumix.core.models import LossMode, MixMethod


def test_parse_skips_comments_and_blank_lines():
    values = parse_config_text("# header\n\nmethod = fmix   # inline\nbase-lr=0.05\n")
    assert values == {"method": "fmix", "base_lr": "0.05"}


def test_parse_keeps_hash_inside_values():
    values = parse_config_text("data_path = /data/run#2\nseed = 3 #note\n  # indented comment\n")
    assert values == {"data_path": "/data/run#2", "seed": "3"}
    config = resolve_config(flag_values={"dataset": "synthetic", "data_path": "/data/run#2"})
    assert parse_config_text(dump_config(config))["data_path"] == "/data/run#2"


def test_parse_last_duplicate_wins():
    assert parse_config_text("epochs = 3\nepochs = 4\n")["epochs"] == "4"


def test_parse_rejects_line_without_equals():
    with pytest.raises(ConfigError, match=r"run\.cfg:2:"):
        parse_config_text("epochs = 3\nepochs 4\n", source="run.cfg")


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as info:
        resolve_config(file_values={"colour": "red"})
    assert info.value.fields == ["colour"]


def test_every_invalid_field_is_named():
    with pytest.raises(ConfigError) as info:
        resolve_config(flag_values={"alpha": "-1", "momentum": "1.5", "epochs": "0"})
    assert sorted(info.value.fields) == ["alpha", "epochs", "momentum"]


def test_invalid_enum_value():
    with pytest.raises(ConfigError) as info:
        resolve_config(flag_values={"method": "snowmix"})
    assert info.value.fields == ["method"]


def test_data_path_required_for_real_datasets():
    with pytest.raises(ConfigError) as info:
        resolve_config(flag_values={"dataset": "cifar100"})
    assert info.value.fields == ["data_path"]


def test_synthetic_needs_no_data_path():
    config = resolve_config()
    assert config.dataset.value == "synthetic"
    assert config.data_path is None


def test_resolution_order():
    defaults = {"epochs": "1", "batch_size": "7", "alpha": "0.3", "seed": "9"}
    file_values = {"epochs": "20", "batch_size": "8"}
    flags = {"epochs": "30", "alpha": None}

    config = resolve_config("synthetic-smoke", file_values, flags, defaults)
    assert config.epochs == 30
    assert config.batch_size == 8
    # the preset sets alpha, a None flag leaves it alone
    assert config.alpha == 0.2
    assert config.seed == 9

    assert resolve_config("synthetic-smoke", file_values, None, defaults).epochs == 20
    assert resolve_config("synthetic-smoke", None, None, defaults).epochs == 10
    assert resolve_config(None, None, None, defaults).epochs == 1


def test_unknown_preset():
    with pytest.raises(ConfigError) as info:
        resolve_config("cifar100-snowmix-sumix")
    assert info.value.fields == ["preset"]


def test_echo_parses_back_to_equal_config(tmp_path: Path):
    config = resolve_config(
        "cifar100-fmix-sumix",
        flag_values={"data_path": str(tmp_path), "widths": "8,16", "num_classes_subset": "10",
                     "weight_decay": "0.0001", "augment": "false"},
    )
    text = dump_config(config)
    assert text.startswith("# resolved TrainConfig\n")
    assert "augment = false" in text
    assert "widths = 8,16" in text
    assert "checkpoint_path = \n" in text

    again = build_config(TrainConfig, parse_config_text(text))
    assert again == config


def test_save_and_load_config(tmp_path: Path):
    config = resolve_config(flag_values={"method": "resizemix", "zeta": "0.2", "loss_mode": "lambda_only"})
    path = tmp_path / "nested" / "config.txt"
    save_config(config, path)

    assert path.exists()
    assert not path.with_suffix(".tmp").exists()
    loaded = resolve_config(file_values=load_config_file(path))
    assert loaded.method is MixMethod.RESIZEMIX
    assert loaded.loss_mode is LossMode.LAMBDA_ONLY
    assert loaded == config


def test_missing_config_file(tmp_path: Path):
    with pytest.raises(ConfigError) as info:
        load_config_file(tmp_path / "absent.cfg")
    assert info.value.fields == ["config"]


def test_log_level_is_normalized():
    assert resolve_config(flag_values={"log_level": "debug"}).log_level == "DEBUG"
    with pytest.raises(ConfigError):
        resolve_config(flag_values={"log_level": "loud"})


class TestDerivedConfigs:
    """Tests for the mixer and encoder views of a TrainConfig."""

    def test_mix_config(self):
        config = TrainConfig(method="saliencymix", alpha=0.7, seed=5)
        assert config.mix_config() == MixConfig(method="saliencymix", alpha=0.7, fmix_decay=3.0, seed=5)

    def test_encoder_config(self):
        config = TrainConfig(arch="mlp", feature_dim=12, widths="20,10")
        encoder = config.encoder_config(7, (1, 28, 28))
        assert encoder.input_shape == (1, 28, 28)
        assert encoder.widths == (20, 10)
        assert encoder.num_classes == 7

    def test_encoder_config_rejects_single_class(self):
        with pytest.raises(ConfigError) as info:
            build_config(EncoderConfig, {"num_classes": 1})
        assert info.value.fields == ["num_classes"]

    def test_mix_config_rejects_zero_alpha(self):
        with pytest.raises(ConfigError) as info:
            build_config(MixConfig, {"alpha": 0})
        assert info.value.fields == ["alpha"]
