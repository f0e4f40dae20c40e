"""
End-to-end tests for the command-line surface.

One small synthetic checkpoint (10 classes of 32×32 images, so the CIFAR-10
record layout fits) is trained once per module and shared by the evaluation
commands.
"""

import logging

import numpy as np
import pytest

from src.sumix.cli.main import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, build_parser, run
from src.sumix.core import training as training_module
from src.sumix.core.data import synthetic_dataset
from src.sumix.infrastructure.artifacts import read_metrics
from src.sumix.infrastructure.cifar_loader import write_cifar
from src.sumix.infrastructure.paths import CONFIG_FILE_NAME, LAST_CHECKPOINT_NAME, LOG_FILE_NAME, METRICS_FILE_NAME

SMALL_RUN = [
    "--synthetic", "--epochs", "1", "--batch-size", "16", "--synthetic-classes", "10",
    "--synthetic-per-class", "4", "--synthetic-size", "32", "--widths", "4", "--feature-dim", "8",
    "--head-dim", "4", "--seed", "1",
]


def _release_log_handlers():
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()


@pytest.fixture(autouse=True)
def reset_logging():
    """run() installs stdout and file handlers; drop them after each test."""
    yield
    _release_log_handlers()


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("trained")
    assert run(["train", *SMALL_RUN, "--run-dir", str(run_dir)]) == EXIT_OK
    _release_log_handlers()
    return run_dir


@pytest.fixture
def checkpoint(trained_run):
    return str(trained_run / "checkpoints" / LAST_CHECKPOINT_NAME)


def _value(output, key):
    """Value printed on a `key = value` line."""
    for line in output.splitlines():
        if line.startswith(f"{key} = "):
            return line.split(" = ", 1)[1]
    raise AssertionError(f"{key} not printed")


class TestParser:
    """Argument parsing and usage errors."""

    def test_config_keys_become_flags(self):
        args = build_parser().parse_args(["train", "--base-lr", "0.3", "--loss-mode", "lambda_only"])
        assert args.base_lr == "0.3" and args.loss_mode == "lambda_only"
        assert args.epochs is None

    def test_unknown_flag(self):
        assert run(["train", "--bogus"]) == EXIT_USAGE

    def test_unknown_preset(self):
        assert run(["train", "--preset", "cifar100-snowmix-sumix"]) == EXIT_USAGE

    def test_missing_command(self):
        assert run([]) == EXIT_USAGE

    def test_version(self, capsys):
        assert run(["--version"]) == EXIT_OK
        assert "sumix" in capsys.readouterr().out


class TestTrain:
    """The train command."""

    def test_run_directory_layout(self, trained_run):
        assert (trained_run / CONFIG_FILE_NAME).exists()
        assert (trained_run / LOG_FILE_NAME).exists()
        assert (trained_run / "tables" / "history.csv").exists()
        assert (trained_run / "images" / "top1.png").exists()
        assert len(read_metrics(trained_run / METRICS_FILE_NAME, kind="step")) == 2

    def test_config_echo_records_flags(self, trained_run):
        text = (trained_run / CONFIG_FILE_NAME).read_text()
        assert "dataset = synthetic" in text
        assert "synthetic_classes = 10" in text
        assert "widths = 4" in text

    def test_prints_summary(self, tmp_path, capsys):
        assert run(["train", "--preset", "synthetic-smoke", "--epochs", "1", "--synthetic-per-class", "10",
                    "--synthetic-size", "8", "--widths", "4", "--feature-dim", "8"]) == EXIT_OK
        output = capsys.readouterr().out
        run_dir = _value(output, "run_dir")
        assert run_dir.startswith(str(tmp_path / "runs"))
        assert 0.0 <= float(_value(output, "train_top1")) <= 1.0

    def test_named_run_under_run_root(self, tmp_path):
        assert run(["train", *SMALL_RUN, "--synthetic-size", "8", "--run-name", "named"]) == EXIT_OK
        assert (tmp_path / "runs" / "named" / CONFIG_FILE_NAME).exists()

    def test_real_dataset_needs_data_path(self):
        assert run(["train"]) == EXIT_USAGE

    def test_invalid_value(self):
        assert run(["train", "--synthetic", "--epochs", "0"]) == EXIT_USAGE

    def test_config_file(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("epochs = 1\nsynthetic_per_class = 10\nsynthetic_size = 8\nwidths = 4\nfeature_dim = 8\n")
        run_dir = tmp_path / "from-file"
        assert run(["train", "--synthetic", "--config", str(config), "--run-dir", str(run_dir)]) == EXIT_OK
        assert "synthetic_size = 8" in (run_dir / CONFIG_FILE_NAME).read_text()

    def test_missing_config_file(self, tmp_path):
        assert run(["train", "--synthetic", "--config", str(tmp_path / "absent.cfg")]) == EXIT_USAGE

    def test_numerical_abort(self, tmp_path, monkeypatch):
        real_loss = training_module.sumix_loss

        def poisoned(*args, **kwargs):
            report = real_loss(*args, **kwargs)
            report.total = report.total * float("inf")
            return report

        monkeypatch.setattr(training_module, "sumix_loss", poisoned)
        assert run(["train", *SMALL_RUN, "--synthetic-size", "8", "--run-dir", str(tmp_path)]) == EXIT_NUMERICAL


class TestEvaluationCommands:
    """Commands reading a checkpoint."""

    def test_evaluate(self, checkpoint, tmp_path, capsys):
        assert run(["evaluate", "--checkpoint", checkpoint, "--run-dir", str(tmp_path)]) == EXIT_OK
        accuracy = float(_value(capsys.readouterr().out, "top1"))
        assert 0.0 <= accuracy <= 1.0
        assert (tmp_path / "tables" / "evaluate.csv").exists()

    def test_evaluate_is_repeatable(self, checkpoint, tmp_path, capsys):
        run(["evaluate", "--checkpoint", checkpoint, "--run-dir", str(tmp_path / "a")])
        first = _value(capsys.readouterr().out, "top1")
        run(["evaluate", "--checkpoint", checkpoint, "--run-dir", str(tmp_path / "b")])
        assert _value(capsys.readouterr().out, "top1") == first

    def test_missing_checkpoint(self, tmp_path):
        assert run(["evaluate", "--checkpoint", str(tmp_path / "none.safetensors")]) == EXIT_DATA

    def test_occlusion(self, checkpoint, tmp_path, capsys):
        code = run(["occlusion", "--checkpoint", checkpoint, "--ratios", "0,0.5,1", "--run-dir", str(tmp_path)])
        assert code == EXIT_OK
        lines = [l for l in capsys.readouterr().out.splitlines() if l.count(",") == 1 and l[0].isdigit()]
        assert [l.split(",")[0] for l in lines] == ["0.000", "0.500", "1.000"]
        assert (tmp_path / "tables" / "occlusion.csv").exists()
        assert (tmp_path / "images" / "occlusion.png").exists()

    def test_occlusion_bad_ratios(self, checkpoint, tmp_path):
        assert run(["occlusion", "--checkpoint", checkpoint, "--ratios", "0,x", "--run-dir", str(tmp_path)]) == EXIT_USAGE

    def test_fgsm(self, checkpoint, tmp_path, capsys):
        assert run(["fgsm", "--checkpoint", checkpoint, "--run-dir", str(tmp_path)]) == EXIT_OK
        error = float(_value(capsys.readouterr().out, "fgsm_error_percent"))
        assert 0.0 <= error <= 100.0
        assert (tmp_path / "tables" / "fgsm.csv").exists()

    def test_corrupt_eval(self, checkpoint, tmp_path, capsys):
        data = synthetic_dataset(10, 2, 32, 32, np.random.default_rng(0))
        write_cifar(tmp_path / "fog.bin", data, "cifar10")
        (tmp_path / "manifest.txt").write_text("fog fog.bin\n")
        code = run(["corrupt-eval", "--checkpoint", checkpoint, "--manifest", str(tmp_path / "manifest.txt"),
                    "--variant", "cifar10", "--run-dir", str(tmp_path / "out")])
        assert code == EXIT_OK
        assert 0.0 <= float(_value(capsys.readouterr().out, "mean_corruption_top1")) <= 1.0
        rows = (tmp_path / "out" / "tables" / "corruption.csv").read_text().splitlines()
        assert rows[0] == "corruption,accuracy"
        assert rows[-1].startswith("mean,")

    def test_corrupt_eval_bad_manifest(self, checkpoint, tmp_path):
        (tmp_path / "manifest.txt").write_text("fog missing.bin\n")
        code = run(["corrupt-eval", "--checkpoint", checkpoint, "--manifest", str(tmp_path / "manifest.txt"),
                    "--variant", "cifar10", "--run-dir", str(tmp_path / "out")])
        assert code == EXIT_DATA

    def test_cam(self, checkpoint, tmp_path):
        code = run(["cam", "--checkpoint", checkpoint, "--index", "0", "3", "--class-index", "2",
                    "--run-dir", str(tmp_path)])
        assert code == EXIT_OK
        names = sorted(p.name for p in (tmp_path / "images").glob("cam-*.png"))
        assert names == ["cam-00000-class2.png", "cam-00003-class2.png"]

    def test_cam_index_out_of_range(self, checkpoint, tmp_path):
        assert run(["cam", "--checkpoint", checkpoint, "--index", "999", "--run-dir", str(tmp_path)]) == EXIT_USAGE


class TestPreviewMix:
    """The preview-mix command."""

    def _stats(self, path):
        blocks = path.read_text().strip().split("\n\n")
        return [dict(line.split(" = ", 1) for line in block.splitlines()) for block in blocks]

    @pytest.mark.parametrize("method", ["cutmix", "fmix", "saliencymix", "resizemix"])
    def test_mask_matches_reported_ratio(self, method, tmp_path, capsys):
        code = run(["preview-mix", "--synthetic", "--synthetic-size", "16", "--method", method,
                    "--lam", "0.3", "--count", "2", "--run-dir", str(tmp_path)])
        assert code == EXIT_OK
        assert _value(capsys.readouterr().out, "lam") == "0.3"
        assert (tmp_path / "images" / "preview.png").exists()
        assert (tmp_path / "images" / "mask-01.png").exists()
        for record in self._stats(tmp_path / "mask_stats.txt"):
            assert int(record["ones_count"]) / int(record["pixels"]) == pytest.approx(float(record["lam_nominal"]))

    def test_fmix_area_is_exact(self, tmp_path):
        run(["preview-mix", "--synthetic", "--synthetic-size", "16", "--method", "fmix",
             "--lam", "0.3", "--count", "1", "--run-dir", str(tmp_path)])
        record = self._stats(tmp_path / "mask_stats.txt")[0]
        assert record["pixels"] == "256"
        assert record["ones_count"] == "77"

    def test_same_seed_same_preview(self, tmp_path):
        args = ["preview-mix", "--synthetic", "--synthetic-size", "16", "--seed", "4", "--count", "2"]
        run([*args, "--run-dir", str(tmp_path / "a")])
        run([*args, "--run-dir", str(tmp_path / "b")])
        assert (tmp_path / "a" / "mask_stats.txt").read_text() == (tmp_path / "b" / "mask_stats.txt").read_text()
        assert (tmp_path / "a" / "images" / "preview.png").read_bytes() == \
            (tmp_path / "b" / "images" / "preview.png").read_bytes()

    def test_rejects_zero_count(self, tmp_path):
        assert run(["preview-mix", "--synthetic", "--count", "0", "--run-dir", str(tmp_path)]) == EXIT_USAGE
