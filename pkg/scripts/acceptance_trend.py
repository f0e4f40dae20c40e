"""
Scaled-down trend experiment for CutMix with and without SUMix.

Trains the small CNN on CIFAR-100 restricted to 10 classes x 500 images,
once per seed and loss mode, then checks that:
1. mean held-out top-1 of CutMix+SUMix is at least the CutMix baseline's minus 0.5 points
2. the recomputed ratios move away from the nominal ones (mean |lam~_a - lam| > 0)
3. on each SUMix encoder, the dominant CutMix parent gets the dominant recomputed weight

Results go to <run root>/trend-<timestamp>/ (summary.csv, sanity.csv).

Usage:
    python scripts/acceptance_trend.py --data-path data/cifar-100-binary [--epochs 50] [--seeds 0 1 2]
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from sumix.config.settings import resolve_config, save_config
from sumix.core.evaluation import median_last_k, semantic_sanity
from sumix.core.repository import DatasetRepository
from sumix.core.training import train
from sumix.infrastructure.artifacts import read_metrics, write_csv
from sumix.infrastructure.logging_config import setup_logging
from sumix.infrastructure.paths import (
    CONFIG_FILE_NAME, LOG_FILE_NAME, METRICS_FILE_NAME, create_run_directory,
)

MODES = ("baseline", "full_su")
TOLERANCE_POINTS = 0.5


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--data-path", type=Path, required=True, help="CIFAR-100 binary directory")
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--per-class", type=int, default=500)
    parser.add_argument("--sanity-pairs", type=int, default=500)
    return parser.parse_args(argv)


def run_one(root: Path, args: argparse.Namespace, mode: str, seed: int) -> dict:
    """Train one (mode, seed) cell and summarize it."""
    config = resolve_config(flag_values={
        "dataset": "cifar100",
        "data_path": str(args.data_path),
        "method": "cutmix",
        "alpha": "1.0",
        "loss_mode": mode,
        "epochs": str(args.epochs),
        "num_classes_subset": str(args.classes),
        "per_class": str(args.per_class),
        "seed": str(seed),
    })
    run_dir = root / f"{mode}-seed{seed}"
    save_config(config, run_dir / CONFIG_FILE_NAME)
    splits = DatasetRepository(config).load()
    result = train(config, splits, run_dir=run_dir)

    steps = read_metrics(run_dir / METRICS_FILE_NAME, kind="step")
    gaps = [r["lam_tilde_gap"] for r in steps if "lam_tilde_gap" in r]
    row = {
        "mode": mode,
        "seed": seed,
        "top1": median_last_k([r["top1"] for r in result.history]),
        "train_top1": result.train_top1,
        "lam_tilde_gap": float(np.mean(gaps)) if gaps else 0.0,
    }
    if mode != "baseline":
        sanity = semantic_sanity(result.model, splits.test, lam=0.9, pairs=args.sanity_pairs, seed=seed)
        row.update(sanity_mean_a=sanity.mean_a, sanity_mean_b=sanity.mean_b,
                   sanity_p=sanity.p_value, sanity_passed=sanity.passed())
    return row


def main(argv=None) -> int:
    args = parse_args(argv)
    root = create_run_directory("trend")
    setup_logging(level=logging.INFO, log_file=root / LOG_FILE_NAME)

    rows = [run_one(root, args, mode, seed) for mode in MODES for seed in args.seeds]
    write_csv(root / "summary.csv", rows, fieldnames=[
        "mode", "seed", "top1", "train_top1", "lam_tilde_gap",
        "sanity_mean_a", "sanity_mean_b", "sanity_p", "sanity_passed",
    ])

    baseline = np.mean([r["top1"] for r in rows if r["mode"] == "baseline"]) * 100
    sumix = np.mean([r["top1"] for r in rows if r["mode"] == "full_su"]) * 100
    gap = np.mean([r["lam_tilde_gap"] for r in rows if r["mode"] == "full_su"])
    sanity_ok = all(r["sanity_passed"] for r in rows if r["mode"] == "full_su")

    checks = {
        f"SUMix top-1 {sumix:.2f} >= baseline {baseline:.2f} - {TOLERANCE_POINTS}": sumix >= baseline - TOLERANCE_POINTS,
        f"mean |lam~_a - lam| = {gap:.4f} > 0": gap > 0,
        "dominant parent keeps the dominant recomputed weight": sanity_ok,
    }
    for message, ok in checks.items():
        print(f"  {'✓' if ok else '✗'} {message}")
    print(f"\nResults in {root}")
    return 0 if all(checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
