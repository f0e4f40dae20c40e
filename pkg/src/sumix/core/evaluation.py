"""
Evaluation harness: accuracy, occlusion sweeps, FGSM, corruption sets, CAM
and the semantic-sanity check of the recomputed ratios.

Every function evaluates a frozen model: the training/eval mode of the model
is restored on return and parameters are never modified.
"""

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy import stats

from ..infrastructure.cifar_loader import load_cifar, read_manifest
from ..infrastructure.logging_config import get_logger
from .data import OCCLUSION_STREAM, occlude, stream
from .encoder import Encoder
from .errors import DataError, InvalidParameterError, ShapeMismatchError, UnsupportedArchitectureError
from .mixers import cutmix
from .models import Architecture, CorruptionReport, Dataset, DatasetKind, RobustnessCurve
from .sumix_loss import cross_entropy, recompute_lambda

logger = get_logger(__name__)

EVAL_BATCH_SIZE = 500
DEFAULT_OCCLUSION_RATIOS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
FGSM_EPSILON = 8.0 / 255.0
SANITY_STREAM = 30


@contextmanager
def frozen(model: torch.nn.Module) -> Iterator[torch.nn.Module]:
    """Put the model in evaluation mode for the duration of the block."""
    was_training = model.training
    model.eval()
    try:
        yield model
    finally:
        model.train(was_training)


def _check_classes(model: Encoder, dataset: Dataset) -> None:
    if model.config.num_classes != dataset.num_classes:
        raise ShapeMismatchError(
            f"Model predicts {model.config.num_classes} classes, dataset has {dataset.num_classes}"
        )


def predict(model: Encoder, images: torch.Tensor) -> torch.Tensor:
    """Predicted class per image; ties go to the lowest class index."""
    with frozen(model), torch.no_grad():
        _, logits = model(images)
    return logits.argmax(dim=1)


def _normalized_batches(dataset: Dataset, batch_size: int) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
    for start in range(0, len(dataset), batch_size):
        stop = start + batch_size
        yield dataset.normalize(dataset.images[start:stop]), dataset.labels[start:stop]


def top1(model: Encoder, dataset: Dataset, batch_size: int = EVAL_BATCH_SIZE) -> float:
    """
    Fraction of samples whose highest logit is the true class.

    Args:
        model: Encoder.
        dataset: Raw-pixel dataset; normalized with its own stats.
        batch_size: Evaluation batch size.

    Returns:
        Accuracy in [0, 1]; NaN for an empty dataset.
    """
    _check_classes(model, dataset)
    if len(dataset) == 0:
        return math.nan
    correct = 0
    for images, labels in _normalized_batches(dataset, batch_size):
        correct += int((predict(model, images) == labels).sum())
    return correct / len(dataset)


def median_last_k(values: Sequence[float], k: int = 10) -> float:
    """Median of the last k values (fewer if fewer exist); NaN when empty."""
    tail = list(values)[-k:]
    return float(np.median(tail)) if tail else math.nan


def occlusion_sweep(
    model: Encoder,
    dataset: Dataset,
    ratios: Sequence[float] = DEFAULT_OCCLUSION_RATIOS,
    patch: int = 16,
    seed: int = 0,
    batch_size: int = EVAL_BATCH_SIZE,
) -> RobustnessCurve:
    """
    Accuracy under random patch occlusion, one point per ratio.

    The patch choice for a ratio depends only on (seed, ratio index), so two
    models evaluated with the same seed see the same occlusions.

    Args:
        model: Encoder.
        dataset: Evaluation data.
        ratios: Strictly increasing ratios in [0, 1].
        patch: Patch side.
        seed: Occlusion seed.
        batch_size: Evaluation batch size.

    Returns:
        RobustnessCurve in the requested ratio order.
    """
    _check_classes(model, dataset)
    if any(not 0.0 <= r <= 1.0 for r in ratios):
        raise InvalidParameterError(f"Occlusion ratios must lie in [0, 1], got {list(ratios)}")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise InvalidParameterError(f"Occlusion ratios must be strictly increasing, got {list(ratios)}")
    accuracies = []
    for index, ratio in enumerate(ratios):
        rng = stream(seed, OCCLUSION_STREAM, index)
        correct = 0
        for images, labels in _normalized_batches(dataset, batch_size):
            occluded = occlude(images, ratio, patch=patch, rng=rng)
            correct += int((predict(model, occluded) == labels).sum())
        accuracies.append(correct / len(dataset) if len(dataset) else math.nan)
        logger.info(f"Occlusion ratio {ratio:.2f}: top1 {accuracies[-1]:.4f}")
    return RobustnessCurve(ratios=list(ratios), accuracies=accuracies)


def fgsm_attack(
    model: Encoder,
    images: torch.Tensor,
    labels: torch.Tensor,
    epsilon: Union[float, torch.Tensor],
    low: Optional[torch.Tensor] = None,
    high: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    One signed-gradient step x + epsilon * sign(grad_x CE), clipped to the valid range.

    Args:
        model: Encoder; evaluated in evaluation mode, parameters untouched.
        images: N×C×H×W normalized batch.
        labels: N class indices.
        epsilon: Step size; a float or a (1, C, 1, 1) per-channel tensor.
        low: Lower bounds of valid normalized pixels (broadcastable), no clipping when None.
        high: Upper bounds.

    Returns:
        Detached adversarial batch.
    """
    epsilon_tensor = torch.as_tensor(epsilon, dtype=images.dtype)
    if torch.any(epsilon_tensor < 0):
        raise InvalidParameterError(f"epsilon must be >= 0, got {epsilon}")
    inputs = images.detach().clone().requires_grad_(True)
    with frozen(model):
        _, logits = model(inputs)
        loss = cross_entropy(logits, F.one_hot(labels.long(), logits.shape[-1]).to(logits.dtype)).sum()
        (grad,) = torch.autograd.grad(loss, inputs)

    adversarial = images.detach() + epsilon_tensor * torch.sign(grad)
    if low is not None:
        adversarial = torch.max(adversarial, low.to(adversarial))
    if high is not None:
        adversarial = torch.min(adversarial, high.to(adversarial))
    return adversarial.detach()


@dataclass
class FgsmReport:
    """Accuracy under FGSM at one pixel-space budget."""

    epsilon: float
    top1: float
    error_percent: float

    def rows(self) -> list[dict]:
        return [{"epsilon": self.epsilon, "top1": self.top1, "error_percent": self.error_percent}]


def fgsm_error(
    model: Encoder,
    dataset: Dataset,
    epsilon: float = FGSM_EPSILON,
    batch_size: int = EVAL_BATCH_SIZE,
) -> FgsmReport:
    """
    FGSM error rate 100 * (1 - top1) on the attacked dataset.

    epsilon is given in raw pixel units and becomes epsilon / std_c per channel
    in normalized space.
    """
    _check_classes(model, dataset)
    per_channel = (epsilon / dataset.std).view(1, -1, 1, 1)
    low, high = dataset.valid_range()
    correct = 0
    for images, labels in _normalized_batches(dataset, batch_size):
        adversarial = fgsm_attack(model, images, labels, per_channel.to(images), low, high)
        correct += int((predict(model, adversarial) == labels).sum())
    accuracy = correct / len(dataset) if len(dataset) else math.nan
    report = FgsmReport(epsilon=epsilon, top1=accuracy, error_percent=100.0 * (1.0 - accuracy))
    logger.info(f"FGSM epsilon {epsilon:.5f}: top1 {accuracy:.4f}, error {report.error_percent:.2f}%")
    return report


def corruption_eval(
    model: Encoder,
    manifest_path: Path,
    mean: torch.Tensor,
    std: torch.Tensor,
    variant=DatasetKind.CIFAR100,
) -> CorruptionReport:
    """
    Top-1 accuracy on every record file listed in a corruption manifest.

    Args:
        model: Encoder.
        manifest_path: `name path` manifest.
        mean: Training-split normalization mean.
        std: Training-split normalization std.
        variant: Record layout of the listed files.

    Returns:
        CorruptionReport with the unweighted mean.

    Raises:
        DataError: For a malformed or empty manifest, or a listed file that is
            missing or unreadable (the message names the manifest line).
    """
    report = CorruptionReport()
    for entry in read_manifest(manifest_path):
        try:
            data = load_cifar(entry.path, variant).with_stats(mean, std)
        except DataError as e:
            raise DataError(f"{manifest_path}:{entry.line}: {e}", line=entry.line) from e
        report.accuracies[entry.name] = top1(model, data)
        logger.info(f"Corruption {entry.name}: top1 {report.accuracies[entry.name]:.4f}")
    logger.info(f"Mean corruption top1 over {len(report.accuracies)} sets: {report.mean:.4f}")
    return report


def cam(model: Encoder, image: torch.Tensor, class_index: int) -> torch.Tensor:
    """
    Class activation map of one normalized image.

    heat = relu(sum_c w[class, c] * featuremap_c), bilinearly upsampled to the
    input size and divided by its maximum.

    Args:
        model: small_cnn encoder.
        image: C×H×W normalized image.
        class_index: Class whose head weights are used.

    Returns:
        H×W map in [0, 1]; all zeros when the map has no positive value.

    Raises:
        UnsupportedArchitectureError: For the mlp encoder.
    """
    if model.arch is not Architecture.SMALL_CNN:
        raise UnsupportedArchitectureError("CAM needs spatial feature maps (small_cnn)")
    if not 0 <= class_index < model.config.num_classes:
        raise InvalidParameterError(f"class_index must lie in [0, {model.config.num_classes})")
    _, h, w = image.shape
    with frozen(model), torch.no_grad():
        maps = model.feature_maps(image.unsqueeze(0))[0]
        weights = model.head.weight[class_index].to(maps)
        heat = F.relu((weights[:, None, None] * maps).sum(dim=0))
        heat = F.interpolate(heat[None, None], size=(h, w), mode="bilinear", align_corners=False)[0, 0]
    peak = heat.max()
    if peak <= 0:
        return torch.zeros_like(heat)
    return (heat / peak).clamp(0.0, 1.0)


@dataclass
class SanityReport:
    """Recomputed ratios of CutMix pairs with a dominant parent a."""

    lam: float
    lam_tilde_a: np.ndarray = field(repr=False)
    lam_tilde_b: np.ndarray = field(repr=False)
    p_value: float = math.nan
    """One-sided Wilcoxon signed-rank p-value for lam_tilde_a > lam_tilde_b."""

    @property
    def mean_a(self) -> float:
        return float(np.mean(self.lam_tilde_a))

    @property
    def mean_b(self) -> float:
        return float(np.mean(self.lam_tilde_b))

    def passed(self, alpha: float = 0.01) -> bool:
        return self.mean_a > self.mean_b and self.p_value < alpha


def semantic_sanity(
    model: Encoder,
    dataset: Dataset,
    lam: float = 0.9,
    pairs: int = 500,
    seed: int = 0,
) -> SanityReport:
    """
    Check that the dominant CutMix parent receives the dominant recomputed weight.

    Random pairs are mixed with a fixed lam; features come from the frozen
    encoder in evaluation mode.

    Returns:
        SanityReport with per-pair ratios and the Wilcoxon p-value.
    """
    if len(dataset) < 2:
        raise DataError("Semantic sanity needs at least two images")
    rng = stream(seed, SANITY_STREAM)
    first = rng.integers(0, len(dataset), size=pairs)
    second = (first + rng.integers(1, len(dataset), size=pairs)) % len(dataset)
    x_a = dataset.normalize(dataset.images[torch.as_tensor(first)])
    x_b = dataset.normalize(dataset.images[torch.as_tensor(second)])

    mix = cutmix(x_a, x_b, lam, rng)
    with frozen(model), torch.no_grad():
        z_tilde = model.features(mix.mixed)
        z_a = model.features(x_a)
        z_b = model.features(x_b)
    lam_tilde_a, lam_tilde_b = recompute_lambda(z_tilde, z_a, z_b, mix.lam_nominal)
    a = lam_tilde_a.double().numpy()
    b = lam_tilde_b.double().numpy()

    p_value = float(stats.wilcoxon(a, b, alternative="greater").pvalue) if np.any(a != b) else 1.0
    report = SanityReport(lam=lam, lam_tilde_a=a, lam_tilde_b=b, p_value=p_value)
    logger.info(
        f"Semantic sanity (lam={lam}, {pairs} pairs): mean lam~_a {report.mean_a:.4f}, "
        f"mean lam~_b {report.mean_b:.4f}, p = {p_value:.3g}"
    )
    return report
