"""
Core domain models for mixing, loss bookkeeping and evaluation results.

This module contains plain data containers shared by the mixers, the SUMix
loss, the training loop and the evaluation harness. Tensors are torch
tensors; everything else is plain Python.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import torch

from .errors import InvalidLabelError, InvalidParameterError, ShapeMismatchError


class MixMethod(str, Enum):
    """Supported mixup variants."""

    MIXUP = "mixup"
    CUTMIX = "cutmix"
    FMIX = "fmix"
    SALIENCYMIX = "saliencymix"
    RESIZEMIX = "resizemix"

    @property
    def is_cutting(self) -> bool:
        """True for the variants that paste a binary-masked region."""
        return self is not MixMethod.MIXUP


class LossMode(str, Enum):
    """Loss assembly modes, from plain MCE up to the full regularized loss."""

    BASELINE_MCE = "baseline_mce"
    LAMBDA_ONLY = "lambda_only"
    SEMANTIC_ONLY = "semantic_only"
    UNCERTAINTY_ONLY = "uncertainty_only"
    FULL_SU = "full_su"

    @property
    def uses_regularizer(self) -> bool:
        """True when the gated regularizer term is part of the loss."""
        return self in (LossMode.SEMANTIC_ONLY, LossMode.UNCERTAINTY_ONLY, LossMode.FULL_SU)

    @property
    def uses_recomputed_lambda(self) -> bool:
        """True when the MCE term is weighted by the recomputed ratios."""
        return self is not LossMode.BASELINE_MCE


class Architecture(str, Enum):
    """Encoder architectures."""

    SMALL_CNN = "small_cnn"
    MLP = "mlp"


class DatasetKind(str, Enum):
    """Dataset sources understood by the repository."""

    SYNTHETIC = "synthetic"
    CIFAR10 = "cifar10"
    CIFAR100 = "cifar100"


@dataclass
class Dataset:
    """An in-memory image classification dataset."""

    images: torch.Tensor
    """M×C×H×W float32 pixels in [0, 1], before normalization."""

    labels: torch.Tensor
    """M int64 class indices in [0, num_classes)."""

    num_classes: int
    """Class count K."""

    mean: Optional[torch.Tensor] = None
    """Per-channel normalization mean (C,). Computed from the data when None."""

    std: Optional[torch.Tensor] = None
    """Per-channel normalization std (C,), strictly positive."""

    name: str = ""
    """Human-readable origin, e.g. 'cifar100/train' or 'synthetic'."""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeMismatchError(f"Images must be M×C×H×W, got shape {tuple(self.images.shape)}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.images.shape[0]:
            raise ShapeMismatchError(
                f"Expected {self.images.shape[0]} labels, got shape {tuple(self.labels.shape)}"
            )
        if self.num_classes < 2:
            raise InvalidParameterError(f"A dataset needs at least 2 classes, got {self.num_classes}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidLabelError(f"Labels must lie in [0, {self.num_classes})")
        if self.mean is None or self.std is None:
            self.mean, self.std = self.compute_stats()
        if torch.any(self.std <= 0):
            raise InvalidParameterError("Normalization std must be strictly positive")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> tuple[int, int, int]:
        """(C, H, W) of a single image."""
        _, c, h, w = self.images.shape
        return int(c), int(h), int(w)

    def compute_stats(self) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Compute per-channel mean and std of the raw pixels.

        Returns:
            (mean, std) tensors of shape (C,). A zero std is replaced by 1.
        """
        c = self.images.shape[1]
        if len(self) == 0:
            return torch.zeros(c), torch.ones(c)
        pixels = self.images.transpose(0, 1).reshape(c, -1).to(torch.float64)
        mean = pixels.mean(dim=1)
        std = pixels.std(dim=1, unbiased=False)
        std = torch.where(std > 0, std, torch.ones_like(std))
        return mean.to(torch.float32), std.to(torch.float32)

    def with_stats(self, mean: torch.Tensor, std: torch.Tensor) -> "Dataset":
        """Return the same data carrying externally supplied normalization stats."""
        return Dataset(self.images, self.labels, self.num_classes, mean.clone(), std.clone(), self.name)

    def normalize(self, images: torch.Tensor) -> torch.Tensor:
        """Map raw [0, 1] pixels to normalized space."""
        mean = self.mean.to(images).view(1, -1, 1, 1)
        std = self.std.to(images).view(1, -1, 1, 1)
        return (images - mean) / std

    def denormalize(self, images: torch.Tensor) -> torch.Tensor:
        """Inverse of normalize()."""
        mean = self.mean.to(images).view(1, -1, 1, 1)
        std = self.std.to(images).view(1, -1, 1, 1)
        return images * std + mean

    def valid_range(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-channel (low, high) bounds of normalized pixels, each shaped (1, C, 1, 1)."""
        low = self.normalize(torch.zeros(1, self.images.shape[1], 1, 1))
        high = self.normalize(torch.ones(1, self.images.shape[1], 1, 1))
        return low, high

    def subset(self, indices) -> "Dataset":
        """Return a dataset restricted to the given sample indices (stats are kept)."""
        index = torch.as_tensor(indices, dtype=torch.long)
        return Dataset(
            self.images[index], self.labels[index], self.num_classes,
            self.mean.clone(), self.std.clone(), self.name
        )

    def class_counts(self) -> list[int]:
        """Number of samples per class."""
        return torch.bincount(self.labels, minlength=self.num_classes).tolist()


@dataclass
class Batch:
    """A normalized mini-batch with one-hot labels."""

    images: torch.Tensor
    """N×C×H×W normalized pixels."""

    labels: torch.Tensor
    """N×K one-hot labels."""

    indices: torch.Tensor
    """Dataset indices of the N samples."""

    @property
    def targets(self) -> torch.Tensor:
        """Class indices recovered from the one-hot labels."""
        return self.labels.argmax(dim=1)


@dataclass
class MixResult:
    """Output of every mixer."""

    mixed: torch.Tensor
    """N×C×H×W mixed batch."""

    mask: torch.Tensor
    """N×H×W mask in [0, 1]; exactly {0, 1} for cutting methods. 1 marks pixels from x_a."""

    lam_nominal: torch.Tensor
    """N float64 fraction of x_a in each mixed sample, recomputed from the realized mask."""

    perm: torch.Tensor
    """N int64 index of the partner sample x_b inside the batch."""

    lam: float = 0.0
    """Batch-level ratio drawn from Beta(alpha, alpha) before any clipping."""

    method: MixMethod = MixMethod.MIXUP
    """Mixer that produced this result."""


@dataclass
class DetachedTerms:
    """Quantities that carry no gradient inside the SUMix loss."""

    raw_features: torch.Tensor
    """N×d features of the unmixed batch, computed without gradient."""

    lam_tilde_a: torch.Tensor
    """N recomputed ratios for parent a."""

    lam_tilde_b: torch.Tensor
    """N recomputed ratios for parent b (1 - lam_tilde_a)."""


@dataclass
class SUMixState:
    """Per-sample intermediate values of the SUMix computation."""

    lam_tilde_a: torch.Tensor
    lam_tilde_b: torch.Tensor
    dist_a: torch.Tensor
    """Softmax-norm distance between mixed and parent-a features."""
    dist_b: torch.Tensor
    u_tilde: torch.Tensor
    """Uncertainty of the mixed features."""
    u_a: torch.Tensor
    """Uncertainty of the raw parent-a features."""
    u_b: torch.Tensor
    beta_a: torch.Tensor
    """u_tilde + u_a."""
    beta_b: torch.Tensor
    z_su: torch.Tensor
    """Convex combination of the per-parent gates."""


@dataclass
class LossReport:
    """Loss terms of one training step and the mode that produced them."""

    mode: LossMode
    zeta: float
    term1: torch.Tensor
    """Mixed cross-entropy weighted by the recomputed (or nominal) ratios."""
    term2: torch.Tensor
    """Unweighted MCE of the gated logits; zero when the mode has no regularizer."""
    total: torch.Tensor
    """term1 + zeta * term2; the only tensor that is backpropagated."""
    lam_nominal: torch.Tensor
    state: Optional[SUMixState] = None
    detached: Optional[DetachedTerms] = None

    def is_finite(self) -> bool:
        """True when every reported term is finite."""
        return bool(torch.isfinite(self.total).item()
                    and torch.isfinite(self.term1).item()
                    and torch.isfinite(self.term2).item())

    def to_record(self, **extra) -> dict:
        """
        Flatten the report into a metrics-stream record.

        Args:
            **extra: Additional keys (step, epoch, lr...) placed first.

        Returns:
            Dictionary of plain Python scalars.
        """
        record = dict(extra)
        record.update({
            "mode": self.mode.value,
            "term1": float(self.term1.detach()),
            "term2": float(self.term2.detach()),
            "zeta": self.zeta,
            "total": float(self.total.detach()),
            "lam_nominal_mean": float(self.lam_nominal.mean()),
        })
        if self.state is not None:
            lam_tilde = self.state.lam_tilde_a.detach().to(self.lam_nominal)
            record["lam_tilde_mean"] = float(lam_tilde.mean())
            record["lam_tilde_gap"] = float((lam_tilde - self.lam_nominal).abs().mean())
            record["z_su_mean"] = float(self.state.z_su.detach().mean())
        return record


@dataclass
class RobustnessCurve:
    """Accuracy as a function of occlusion ratio."""

    ratios: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.ratios) != len(self.accuracies):
            raise ShapeMismatchError("Ratios and accuracies must have the same length")
        for low, high in zip(self.ratios, self.ratios[1:]):
            if not high > low:
                raise InvalidParameterError("Occlusion ratios must be strictly increasing")

    def rows(self) -> list[dict]:
        """Rows for CSV emission."""
        return [{"ratio": r, "accuracy": a} for r, a in zip(self.ratios, self.accuracies)]


@dataclass
class CorruptionReport:
    """Top-1 accuracy per corruption file."""

    accuracies: dict[str, float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        """Unweighted mean over corruptions."""
        if not self.accuracies:
            return math.nan
        return sum(self.accuracies.values()) / len(self.accuracies)

    def rows(self) -> list[dict]:
        """Rows for CSV emission, mean last."""
        rows = [{"corruption": name, "accuracy": acc} for name, acc in self.accuracies.items()]
        rows.append({"corruption": "mean", "accuracy": self.mean})
        return rows
