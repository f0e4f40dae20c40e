"""
Preset registry.

This module provides the published regularizer weights (zeta) and Beta
concentrations (alpha) as lookup tables, plus named TrainConfig presets built
from them. Tables are keyed by (dataset, backbone) then by mixer name.
"""

from dataclasses import dataclass, field

from ..core.errors import ConfigError

# zeta per mixer, keyed by (dataset, backbone)
ZETA_TABLE: dict[tuple[str, str], dict[str, float]] = {
    ("cifar100", "resnet18"): {"cutmix": 0.5, "fmix": 1.0, "saliencymix": 0.5, "resizemix": 0.2},
    ("cifar100", "resnext50"): {"cutmix": 0.5, "fmix": 1.0, "saliencymix": 1.0, "resizemix": 0.5},
    ("cifar100", "wrn28_8"): {"cutmix": 0.5, "fmix": 0.5, "saliencymix": 0.5, "resizemix": 0.5},
    ("cifar100", "deit_small"): {"cutmix": 0.5, "fmix": 0.5, "saliencymix": 0.5, "resizemix": 0.5},
    ("cifar100", "swin_tiny"): {"cutmix": 0.5, "fmix": 0.5, "saliencymix": 0.5, "resizemix": 0.5},
    ("cub200", "resnet18"): {"cutmix": 1.0, "fmix": 0.5, "saliencymix": 0.5, "resizemix": 0.5},
    ("cub200", "resnext50"): {"cutmix": 0.5, "fmix": 0.1, "saliencymix": 0.2, "resizemix": 0.5},
    ("fgvc_aircraft", "resnet18"): {"cutmix": 1.0, "fmix": 0.5, "saliencymix": 1.0, "resizemix": 0.5},
    ("fgvc_aircraft", "resnext50"): {"cutmix": 0.5, "fmix": 0.5, "saliencymix": 0.5, "resizemix": 0.5},
    ("tiny_imagenet", "resnet18"): {"cutmix": 1.0, "fmix": 1.0, "saliencymix": 1.0, "resizemix": 1.0},
    ("tiny_imagenet", "resnext50"): {"cutmix": 1.0, "fmix": 1.0, "saliencymix": 1.0, "resizemix": 1.0},
    ("imagenet1k", "resnet18"): {"cutmix": 0.5, "fmix": 0.5, "saliencymix": 0.5, "resizemix": 0.5},
}

# Beta(alpha, alpha) concentration per mixer, keyed by backbone family
ALPHA_TABLE: dict[str, dict[str, float]] = {
    "cnn": {"mixup": 1.0, "cutmix": 0.2, "fmix": 0.2, "saliencymix": 0.2, "resizemix": 1.0},
    "vit": {"mixup": 1.0, "cutmix": 2.0, "fmix": 1.0, "saliencymix": 0.2, "resizemix": 1.0},
}

DESK_EPOCHS = 50
MIXERS = ("mixup", "cutmix", "fmix", "saliencymix", "resizemix")


@dataclass(frozen=True)
class Preset:
    """A named set of TrainConfig overrides."""

    name: str
    """Registry key, e.g. 'cifar100-cutmix-sumix'."""

    overrides: dict = field(default_factory=dict)
    """TrainConfig field values applied before config file and flags."""

    note: str = ""
    """Where the values come from."""


def _desk_presets() -> list[Preset]:
    presets = []
    zeta_column = ZETA_TABLE[("cifar100", "resnet18")]
    for method in MIXERS:
        common = {
            "method": method,
            "alpha": ALPHA_TABLE["cnn"][method],
            "dataset": "cifar100",
            "epochs": DESK_EPOCHS,
            "batch_size": 100,
            "base_lr": 0.1,
            "momentum": 0.9,
            "weight_decay": 1e-4,
        }
        zeta = zeta_column.get(method, 0.5)
        presets.append(Preset(
            name=f"cifar100-{method}-sumix",
            overrides={**common, "zeta": zeta, "loss_mode": "full_su"},
            note="CIFAR-100 / ResNet18 zeta column, CNN alpha, desk-scale epochs",
        ))
        presets.append(Preset(
            name=f"cifar100-{method}-baseline",
            overrides={**common, "zeta": zeta, "loss_mode": "baseline_mce"},
            note="Same recipe with plain mixed cross-entropy",
        ))
    return presets


def _recipe_presets() -> list[Preset]:
    cutmix_r18 = {"method": "cutmix", "alpha": ALPHA_TABLE["cnn"]["cutmix"], "loss_mode": "full_su",
                  "batch_size": 100, "momentum": 0.9}
    return [
        Preset(
            name="recipe-cifar100-r18-800ep",
            overrides={**cutmix_r18, "dataset": "cifar100", "epochs": 800, "base_lr": 0.1,
                       "weight_decay": 1e-4, "zeta": ZETA_TABLE[("cifar100", "resnet18")]["cutmix"]},
            note="CIFAR-100 ResNet-scale recipe: 800 epochs, lr 0.1, wd 1e-4",
        ),
        Preset(
            name="recipe-cifar100-wrn-400ep",
            overrides={**cutmix_r18, "dataset": "cifar100", "epochs": 400, "base_lr": 0.03,
                       "weight_decay": 1e-3, "zeta": ZETA_TABLE[("cifar100", "wrn28_8")]["cutmix"]},
            note="CIFAR-100 Wide-ResNet recipe: 400 epochs, lr 0.03, wd 1e-3",
        ),
        Preset(
            name="recipe-tiny-imagenet-400ep",
            overrides={**cutmix_r18, "epochs": 400, "base_lr": 0.2, "weight_decay": 1e-4,
                       "zeta": ZETA_TABLE[("tiny_imagenet", "resnet18")]["cutmix"]},
            note="Tiny-ImageNet recipe (hyper-parameters only; supply data in CIFAR record format)",
        ),
        Preset(
            name="recipe-imagenet-r18-100ep",
            overrides={**cutmix_r18, "epochs": 100, "base_lr": 0.1, "weight_decay": 1e-4,
                       "zeta": ZETA_TABLE[("imagenet1k", "resnet18")]["cutmix"]},
            note="ImageNet-1K recipe (hyper-parameters only)",
        ),
        Preset(
            name="synthetic-smoke",
            overrides={"dataset": "synthetic", "epochs": 10, "batch_size": 50, "base_lr": 0.05,
                       "method": "cutmix", "alpha": 0.2, "loss_mode": "full_su", "zeta": 0.5,
                       "synthetic_classes": 4, "synthetic_per_class": 100},
            note="Seconds-long run on separable synthetic blobs",
        ),
    ]


PRESETS: dict[str, Preset] = {p.name: p for p in _desk_presets() + _recipe_presets()}


def get_preset(name: str) -> Preset:
    """
    Look up a preset by name.

    Args:
        name: Registry key.

    Returns:
        The preset.

    Raises:
        ConfigError: If the name is unknown.
    """
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"Unknown preset '{name}'. Available: {', '.join(sorted(PRESETS))}", fields=["preset"]
        ) from None


def zeta_for(method: str, dataset: str = "cifar100", backbone: str = "resnet18") -> float:
    """Published zeta for a mixer, falling back to the 0.5 default."""
    return ZETA_TABLE.get((dataset, backbone), {}).get(method, 0.5)
