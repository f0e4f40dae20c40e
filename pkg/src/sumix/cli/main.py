"""
Command-line entry point.

    sumix train        --preset cifar100-cutmix-sumix --data-path data/cifar-100-binary
    sumix train        --synthetic --epochs 5
    sumix evaluate     --checkpoint runs/<run>/checkpoints/last.safetensors
    sumix occlusion    --checkpoint ... --ratios 0,0.25,0.5,0.75,1
    sumix fgsm         --checkpoint ... --epsilon 0.0313725
    sumix corrupt-eval --checkpoint ... --manifest corruptions.txt
    sumix preview-mix  --method fmix --lam 0.3 --seed 1
    sumix cam          --checkpoint ... --index 0

Every subcommand accepts the TrainConfig keys as flags (--base-lr, --zeta...),
a config file (--config) and a preset (--preset); flags win over the file,
the file over the preset. Outputs go to a fresh run directory under
$SUMIX_RUN_ROOT (default ./runs) unless --run-dir names one.

Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
3 data error, 4 numerical abort.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from .. import __version__
from ..config.presets import PRESETS
from ..config.settings import (
    MixConfig, TrainConfig, load_config_file, parse_config_text, resolve_config, save_config,
)
from ..core.data import stream
from ..core.errors import ConfigError, DataError, NumericalAbortError, SumixError
from ..core.evaluation import (
    DEFAULT_OCCLUSION_RATIOS, FGSM_EPSILON, cam, corruption_eval, fgsm_error, median_last_k,
    occlusion_sweep, predict, top1,
)
from ..core.mixers import mix_pair, sample_lambda
from ..core.models import Dataset, DatasetKind
from ..core.repository import DatasetRepository
from ..core.training import Trainer, restore_model
from ..infrastructure.artifacts import (
    cam_overlay, image_grid, plot_curve, save_png, write_csv, write_key_values,
)
from ..infrastructure.checkpoint import load_checkpoint
from ..infrastructure.logging_config import get_logger, setup_logging
from ..infrastructure.paths import (
    CONFIG_FILE_NAME, LOG_FILE_NAME, create_run_directory, get_images_directory, get_tables_directory,
)

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

PREVIEW_STREAM = 40

# train reads real data unless told otherwise
TRAIN_DEFAULTS = {"dataset": DatasetKind.CIFAR100.value}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key = value config file")
    parser.add_argument("--preset", choices=sorted(PRESETS), metavar="NAME", help="named preset")
    parser.add_argument("--run-dir", type=Path, help="write outputs here instead of a fresh run directory")
    parser.add_argument("--run-name", help="name of the run directory under the run root")
    parser.add_argument("--synthetic", action="store_true", help="use the synthetic dataset")
    config_group = parser.add_argument_group("configuration keys")
    for name in TrainConfig.model_fields:
        config_group.add_argument(_flag(name), dest=name, default=None, metavar="VALUE")


def _add_checkpoint_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", type=Path, required=True, help="checkpoint .safetensors file")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subparser per command."""
    parser = argparse.ArgumentParser(prog="sumix", description="Mixup training with SUMix and robustness evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    train = commands.add_parser("train", help="train an encoder")
    _add_common_arguments(train)

    evaluate = commands.add_parser("evaluate", help="held-out top-1 accuracy of a checkpoint")
    _add_common_arguments(evaluate)
    _add_checkpoint_argument(evaluate)

    occlusion = commands.add_parser("occlusion", help="accuracy under patch occlusion")
    _add_common_arguments(occlusion)
    _add_checkpoint_argument(occlusion)
    occlusion.add_argument("--ratios", default=",".join(str(r) for r in DEFAULT_OCCLUSION_RATIOS),
                           help="comma-separated occlusion ratios")
    occlusion.add_argument("--patch", type=int, default=16, help="patch side in pixels")

    fgsm = commands.add_parser("fgsm", help="FGSM error rate")
    _add_common_arguments(fgsm)
    _add_checkpoint_argument(fgsm)
    fgsm.add_argument("--epsilon", type=float, default=FGSM_EPSILON, help="budget in [0, 1] pixel units")

    corrupt = commands.add_parser("corrupt-eval", help="accuracy on corrupted record files")
    _add_common_arguments(corrupt)
    _add_checkpoint_argument(corrupt)
    corrupt.add_argument("--manifest", type=Path, required=True, help="file of 'name path' lines")
    corrupt.add_argument("--variant", choices=[DatasetKind.CIFAR10.value, DatasetKind.CIFAR100.value],
                         help="record layout of the listed files (default: the training dataset's)")

    preview = commands.add_parser("preview-mix", help="write mixed samples and masks as PNG")
    _add_common_arguments(preview)
    preview.add_argument("--lam", type=float, help="fixed mixing ratio (drawn from Beta(alpha, alpha) otherwise)")
    preview.add_argument("--count", type=int, default=4, help="number of mixed pairs")

    cam_parser = commands.add_parser("cam", help="class activation map overlays")
    _add_common_arguments(cam_parser)
    _add_checkpoint_argument(cam_parser)
    cam_parser.add_argument("--index", type=int, nargs="+", default=[0], help="held-out image indices")
    cam_parser.add_argument("--class-index", type=int, help="class to explain (default: predicted class)")
    return parser


def _resolve(args: argparse.Namespace, defaults: Optional[dict] = None) -> TrainConfig:
    file_values = load_config_file(args.config) if args.config else None
    flag_values = {name: getattr(args, name) for name in TrainConfig.model_fields}
    if args.synthetic:
        flag_values["dataset"] = DatasetKind.SYNTHETIC.value
    return resolve_config(args.preset, file_values, flag_values, defaults=defaults)


def _open_run(args: argparse.Namespace, config: TrainConfig) -> Path:
    run_dir = args.run_dir if args.run_dir is not None else create_run_directory(args.command, args.run_name)
    run_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(level=getattr(logging, config.log_level), log_file=run_dir / LOG_FILE_NAME)
    save_config(config, run_dir / CONFIG_FILE_NAME)
    logger.info(f"sumix {__version__} {args.command}: run directory {run_dir}")
    return run_dir


def _progress(bar: tqdm) -> Callable[[int, int, str], None]:
    def update(current: int, total: int, message: str) -> None:
        bar.total = total
        bar.update(current - bar.n)
        bar.set_description(message)
    return update


def _load_evaluation(args: argparse.Namespace):
    """Config, held-out data (with training stats) and model of a checkpoint."""
    checkpoint = load_checkpoint(args.checkpoint)
    config = _resolve(args, defaults=parse_config_text(checkpoint.config_text, source=str(args.checkpoint)))
    run_dir = _open_run(args, config)
    splits = DatasetRepository(config).load()
    test = splits.test.with_stats(checkpoint.mean, checkpoint.std)
    model, _ = restore_model(checkpoint, config, test.num_classes, test.image_shape)
    return config, run_dir, checkpoint, test, model


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve(args, defaults=TRAIN_DEFAULTS)
    run_dir = _open_run(args, config)
    splits = DatasetRepository(config).load()
    trainer = Trainer(config, splits, run_dir=run_dir)
    with tqdm(total=trainer.total_steps, initial=trainer.step, disable=None, unit="step") as bar:
        trainer.progress_callback = _progress(bar)
        result = trainer.run()

    tables = get_tables_directory(run_dir)
    if result.history:
        write_csv(tables / "history.csv", result.history)
        plot_curve(get_images_directory(run_dir) / "top1.png", [r["epoch"] for r in result.history],
                   {"held-out top1": [r["top1"] for r in result.history]}, "epoch", "top-1 accuracy")
    final = median_last_k([r["top1"] for r in result.history])
    print(f"run_dir = {run_dir}")
    print(f"train_top1 = {result.train_top1:.4f}")
    print(f"median_last_10 = {final:.4f}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    _, run_dir, checkpoint, test, model = _load_evaluation(args)
    accuracy = top1(model, test)
    history = [r["top1"] for r in checkpoint.history]
    rows = [{"checkpoint": str(args.checkpoint), "epoch": checkpoint.epoch, "top1": accuracy,
             "median_last_10": median_last_k(history) if history else accuracy}]
    write_csv(get_tables_directory(run_dir) / "evaluate.csv", rows)
    print(f"top1 = {accuracy:.4f}")
    return EXIT_OK


def cmd_occlusion(args: argparse.Namespace) -> int:
    config, run_dir, _, test, model = _load_evaluation(args)
    try:
        ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
    except ValueError:
        raise ConfigError(f"--ratios must be comma-separated numbers, got {args.ratios!r}", fields=["ratios"])
    curve = occlusion_sweep(model, test, ratios, patch=args.patch, seed=config.seed)
    write_csv(get_tables_directory(run_dir) / "occlusion.csv", curve.rows(), ["ratio", "accuracy"])
    plot_curve(get_images_directory(run_dir) / "occlusion.png", curve.ratios, {"top1": curve.accuracies},
               "occlusion ratio", "top-1 accuracy")
    for row in curve.rows():
        print(f"{row['ratio']:.3f},{row['accuracy']:.4f}")
    return EXIT_OK


def cmd_fgsm(args: argparse.Namespace) -> int:
    _, run_dir, _, test, model = _load_evaluation(args)
    report = fgsm_error(model, test, epsilon=args.epsilon)
    write_csv(get_tables_directory(run_dir) / "fgsm.csv", report.rows(), ["epsilon", "top1", "error_percent"])
    print(f"fgsm_error_percent = {report.error_percent:.2f}")
    return EXIT_OK


def cmd_corrupt_eval(args: argparse.Namespace) -> int:
    config, run_dir, checkpoint, _, model = _load_evaluation(args)
    variant = args.variant or (config.dataset.value if config.dataset is not DatasetKind.SYNTHETIC
                               else DatasetKind.CIFAR100.value)
    report = corruption_eval(model, args.manifest, checkpoint.mean, checkpoint.std, variant)
    write_csv(get_tables_directory(run_dir) / "corruption.csv", report.rows(), ["corruption", "accuracy"])
    print(f"mean_corruption_top1 = {report.mean:.4f}")
    return EXIT_OK


def _preview_images(dataset: Dataset, count: int, rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    if len(dataset) < 2:
        raise DataError("Preview needs at least two images")
    first = rng.choice(len(dataset), size=count, replace=len(dataset) < count)
    second = (first + rng.integers(1, len(dataset), size=count)) % len(dataset)
    return dataset.images[torch.as_tensor(first)], dataset.images[torch.as_tensor(second)]


def cmd_preview_mix(args: argparse.Namespace) -> int:
    config = _resolve(args)
    run_dir = _open_run(args, config)
    if args.count < 1:
        raise ConfigError("--count must be >= 1", fields=["count"])
    dataset = DatasetRepository(config).load().train
    rng = stream(config.seed, PREVIEW_STREAM)
    x_a, x_b = _preview_images(dataset, args.count, rng)
    mix_config: MixConfig = config.mix_config()
    lam = args.lam if args.lam is not None else sample_lambda(mix_config.alpha, rng)
    result = mix_pair(x_a, x_b, mix_config, lam, rng)

    images = get_images_directory(run_dir)
    rows = [[x_a[i], x_b[i], result.mixed[i], result.mask[i]] for i in range(args.count)]
    save_png(images / "preview.png", image_grid(rows))
    stats = []
    _, h, w = result.mask.shape
    for i in range(args.count):
        save_png(images / f"mask-{i:02d}.png", result.mask[i])
        stats.append({
            "index": i,
            "lam_nominal": repr(float(result.lam_nominal[i])),
            "ones_count": int(round(float(result.mask[i].double().sum()))),
            "pixels": h * w,
        })
    write_key_values(run_dir / "mask_stats.txt", stats)
    print(f"method = {mix_config.method.value}")
    print(f"lam = {lam}")
    for record in stats:
        print(f"lam_nominal[{record['index']}] = {record['lam_nominal']}")
    return EXIT_OK


def cmd_cam(args: argparse.Namespace) -> int:
    _, run_dir, _, test, model = _load_evaluation(args)
    images = get_images_directory(run_dir)
    for index in args.index:
        if not 0 <= index < len(test):
            raise ConfigError(f"--index {index} outside the held-out split (size {len(test)})", fields=["index"])
        image = test.normalize(test.images[index:index + 1])
        class_index = args.class_index if args.class_index is not None else int(predict(model, image)[0])
        heat = cam(model, image[0], class_index)
        path = save_png(images / f"cam-{index:05d}-class{class_index}.png", cam_overlay(test.images[index], heat))
        print(f"cam[{index}] = {path}")
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "occlusion": cmd_occlusion,
    "fgsm": cmd_fgsm,
    "corrupt-eval": cmd_corrupt_eval,
    "preview-mix": cmd_preview_mix,
    "cam": cmd_cam,
}


def _fail(code: int, error: BaseException, exc_info: bool = False) -> int:
    logger.error(f"{type(error).__name__}: {error}", exc_info=exc_info)
    print(f"sumix: error: {error}", file=sys.stderr)
    return code


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, dispatch the subcommand and map errors to exit codes.

    Args:
        argv: Arguments without the program name; sys.argv[1:] when None.

    Returns:
        Process exit status.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    setup_logging(level=logging.INFO, log_to_file=False)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        return _fail(EXIT_USAGE, e)
    except (DataError, FileNotFoundError) as e:
        return _fail(EXIT_DATA, e, exc_info=True)
    except NumericalAbortError as e:
        return _fail(EXIT_NUMERICAL, e, exc_info=True)
    except SumixError as e:
        return _fail(EXIT_FAILURE, e, exc_info=True)


def main() -> None:
    """Console-script entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
