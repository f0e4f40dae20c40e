"""
Tests for run artifacts and the run-directory helpers.
"""

import logging
import math

import numpy as np
import torch
from PIL import Image

from src.sumix.infrastructure.artifacts import (
    MetricsWriter, cam_overlay, image_grid, plot_curve, read_metrics, save_png, write_csv,
    write_key_values,
)
from src.sumix.infrastructure.logging_config import get_logger, setup_logging
from src.sumix.infrastructure.paths import (
    LOG_FILE_NAME, OLD_LOG_FILE_NAME, create_run_directory, epoch_checkpoint_name, get_run_root,
)


class TestMetrics:
    """Tests for the JSON-lines stream."""

    def test_write_and_filter(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        with MetricsWriter(path) as writer:
            writer.write("step", {"step": 0, "total": 1.5})
            writer.write("eval", {"epoch": 1, "top1": 0.25})
            writer.write("step", {"step": 1, "total": float("nan")})
        assert writer.records_written == 3
        steps = read_metrics(path, kind="step")
        assert [r["step"] for r in steps] == [0, 1]
        # non-finite values are stored as strings
        assert math.isnan(float(steps[1]["total"]))
        assert read_metrics(path, kind="eval") == [{"kind": "eval", "epoch": 1, "top1": 0.25}]

    def test_append_continues_stream(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        with MetricsWriter(path) as writer:
            writer.write("step", {"step": 0})
        with MetricsWriter(path, append=True) as writer:
            writer.write("step", {"step": 1})
        assert len(read_metrics(path)) == 2


class TestTables:
    """Tests for CSV and key-value files."""

    def test_csv_header_and_rows(self, tmp_path):
        path = write_csv(tmp_path / "t" / "curve.csv", [{"ratio": 0.0, "accuracy": 0.9}, {"ratio": 0.5, "accuracy": 0.4}])
        assert path.read_text().splitlines() == ["ratio,accuracy", "0.0,0.9", "0.5,0.4"]
        assert not path.with_suffix(".tmp").exists()

    def test_csv_explicit_columns(self, tmp_path):
        path = write_csv(tmp_path / "c.csv", [{"b": 2, "a": 1}], fieldnames=["a", "b"])
        assert path.read_text().splitlines()[1] == "1,2"

    def test_key_values(self, tmp_path):
        path = write_key_values(tmp_path / "stats.txt", [{"index": 0, "ones": 3}, {"index": 1, "ones": 4}])
        assert path.read_text() == "index = 0\nones = 3\n\nindex = 1\nones = 4\n"


class TestImages:
    """Tests for PNG output."""

    def test_save_tensor(self, tmp_path):
        image = torch.zeros(3, 4, 5)
        image[0] = 1.0
        path = save_png(tmp_path / "red.png", image)
        loaded = np.asarray(Image.open(path))
        assert loaded.shape == (4, 5, 3)
        assert loaded[0, 0].tolist() == [255, 0, 0]

    def test_save_mask(self, tmp_path):
        mask = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        loaded = np.asarray(Image.open(save_png(tmp_path / "mask.png", mask)))
        assert loaded.tolist() == [[0, 255], [255, 0]]

    def test_grid_geometry(self):
        rows = [[torch.zeros(3, 4, 4), torch.ones(4, 4)], [torch.ones(3, 4, 4)]]
        grid = image_grid(rows, padding=1)
        assert grid.shape == (2 * 5 + 1, 2 * 5 + 1, 3)
        assert grid[1, 1].tolist() == [0, 0, 0]
        assert grid[1, 6].tolist() == [255, 255, 255]

    def test_cam_overlay_shape(self):
        overlay = cam_overlay(torch.rand(3, 6, 6), torch.rand(6, 6))
        assert overlay.shape == (6, 6, 3) and overlay.dtype == np.uint8

    def test_plot_curve(self, tmp_path):
        path = plot_curve(tmp_path / "plot.png", [0, 0.5, 1], {"top1": [0.9, 0.5, 0.1]}, "ratio", "accuracy")
        assert Image.open(path).format == "PNG"


class TestRunDirectories:
    """Tests for run-directory naming."""

    def test_run_root_from_environment(self, tmp_path):
        assert get_run_root() == tmp_path / "runs"

    def test_default_run_root(self, monkeypatch):
        monkeypatch.delenv("SUMIX_RUN_ROOT")
        assert str(get_run_root()) == "runs"

    def test_generated_names_do_not_collide(self):
        first = create_run_directory("train")
        second = create_run_directory("train")
        assert first != second
        assert first.name.startswith("train-") and first.is_dir() and second.is_dir()

    def test_explicit_name_is_reused(self):
        assert create_run_directory("train", "mine") == create_run_directory("evaluate", "mine")

    def test_checkpoint_names(self):
        assert epoch_checkpoint_name(7) == "epoch-0007.safetensors"


class TestRunLog:
    """Tests for the run log file."""

    def _close_handlers(self):
        root = logging.getLogger()
        for handler in list(root.handlers):
            root.removeHandler(handler)
            handler.close()

    def test_second_session_rotates(self, tmp_path, capsys):
        log_file = tmp_path / LOG_FILE_NAME
        try:
            setup_logging(log_file=log_file)
            get_logger("sumix.test").info("first session")
            setup_logging(log_file=log_file)
            get_logger("sumix.test").info("second session")
        finally:
            self._close_handlers()
        assert "first session" in (tmp_path / OLD_LOG_FILE_NAME).read_text()
        assert "first session" not in log_file.read_text()
        assert " - sumix.test - INFO - second session" in log_file.read_text()
        # stdout stays free for command results
        assert capsys.readouterr().out == ""
