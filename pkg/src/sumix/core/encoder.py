"""
Encoders producing a penultimate feature vector and class logits.

Two architectures are available:
    small_cnn   stages of (conv3x3 -> BatchNorm -> ReLU) x2, stride 2 at the
                start of every stage after the first, global average pool
    mlp         flatten -> hidden ReLU layers -> linear feature layer

Both end in a linear classifier head applied to the feature vector.
"""

import math
from contextlib import contextmanager
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from torch import nn

from ..config.settings import EncoderConfig
from ..infrastructure.logging_config import get_logger
from .errors import DisconnectedLossError, ShapeMismatchError, UnsupportedArchitectureError
from .models import Architecture

logger = get_logger(__name__)


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """
    Fan-in scaled Gaussian weights and zero biases for every conv/linear layer.

    Args:
        module: Module whose sub-layers are (re)initialized in place.
        generator: Torch random generator.
    """
    with torch.no_grad():
        for layer in module.modules():
            if isinstance(layer, (nn.Conv2d, nn.Linear)):
                fan_in = layer.weight[0].numel()
                weight = torch.randn(layer.weight.shape, generator=generator, dtype=torch.float64)
                layer.weight.copy_(weight * math.sqrt(2.0 / fan_in))
                if layer.bias is not None:
                    layer.bias.zero_()


def _conv_block(in_channels: int, out_channels: int, stride: int) -> list[nn.Module]:
    return [
        nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(inplace=False),
    ]


class Encoder(nn.Module):
    """Feature extractor plus linear classifier head."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        arch = Architecture(config.arch)
        channels = (*config.widths, config.feature_dim)

        if arch is Architecture.SMALL_CNN:
            layers: list[nn.Module] = []
            in_channels = config.in_channels
            for stage, out_channels in enumerate(channels):
                layers += _conv_block(in_channels, out_channels, stride=1 if stage == 0 else 2)
                layers += _conv_block(out_channels, out_channels, stride=1)
                in_channels = out_channels
            self.body = nn.Sequential(*layers)
        else:
            layers = [nn.Flatten()]
            in_features = config.in_channels * config.height * config.width
            for hidden in config.widths:
                layers += [nn.Linear(in_features, hidden), nn.ReLU(inplace=False)]
                in_features = hidden
            layers.append(nn.Linear(in_features, config.feature_dim))
            self.body = nn.Sequential(*layers)

        self.head = nn.Linear(config.feature_dim, config.num_classes)

    @property
    def arch(self) -> Architecture:
        return Architecture(self.config.arch)

    def _check_input(self, images: torch.Tensor) -> None:
        if images.ndim != 4 or tuple(images.shape[1:]) != self.config.input_shape:
            raise ShapeMismatchError(
                f"Expected N×{'×'.join(map(str, self.config.input_shape))} input, got {tuple(images.shape)}"
            )

    def feature_maps(self, images: torch.Tensor) -> torch.Tensor:
        """
        Last-stage spatial activations (N×d×h×w) of the small CNN.

        Raises:
            UnsupportedArchitectureError: For the mlp encoder.
        """
        if self.arch is not Architecture.SMALL_CNN:
            raise UnsupportedArchitectureError("Spatial feature maps need the small_cnn encoder")
        self._check_input(images)
        return self.body(images)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        """N×d penultimate features."""
        self._check_input(images)
        out = self.body(images)
        if self.arch is Architecture.SMALL_CNN:
            out = out.mean(dim=(2, 3))
        return out

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        features = self.features(images)
        return features, self.head(features)


def build_encoder(config: EncoderConfig, rng: np.random.Generator) -> Encoder:
    """
    Build and initialize an encoder.

    Args:
        config: Validated encoder settings.
        rng: Random stream; the same stream state gives identical parameters.

    Returns:
        A freshly initialized Encoder in training mode.
    """
    model = Encoder(config)
    generator = torch.Generator().manual_seed(int(rng.integers(0, 2**62)))
    init_parameters(model, generator)
    logger.debug(f"Built {config.arch} encoder with {parameter_count(model)} parameters")
    return model


def parameter_count(model: nn.Module) -> int:
    """Number of trainable scalars."""
    return sum(p.numel() for p in model.parameters())


def mlp_parameter_count(config: EncoderConfig) -> int:
    """Closed-form parameter count of the mlp encoder including its head."""
    dims = [config.in_channels * config.height * config.width, *config.widths, config.feature_dim]
    body = sum(i * o + o for i, o in zip(dims, dims[1:]))
    return body + config.feature_dim * config.num_classes + config.num_classes


@contextmanager
def batch_statistics(model: nn.Module) -> Iterator[None]:
    """
    Let normalization layers use batch statistics without touching running averages.

    Only has an effect in training mode.
    """
    norms = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    saved = [m.track_running_stats for m in norms]
    try:
        for m in norms:
            m.track_running_stats = False
        yield
    finally:
        for m, flag in zip(norms, saved):
            m.track_running_stats = flag


def raw_features(model: Encoder, images: torch.Tensor) -> torch.Tensor:
    """
    Features of unmixed samples, computed without gradient.

    In training mode normalization runs on batch statistics and leaves the
    running averages untouched; in evaluation mode the running averages are used.
    """
    with torch.no_grad():
        if model.training:
            with batch_statistics(model):
                return model.features(images)
        return model.features(images)


def backward(
    model: nn.Module,
    loss: torch.Tensor,
    inputs: Optional[torch.Tensor] = None,
    extra: Sequence[nn.Module] = (),
) -> Optional[torch.Tensor]:
    """
    Populate .grad of every parameter of model (and extra modules) from loss.

    Parameters the loss does not reach receive zero gradients.

    Args:
        model: Module whose parameters receive gradients.
        loss: Scalar loss.
        inputs: Optional tensor (with requires_grad) whose gradient is returned.
        extra: Further modules trained with the same loss (e.g. the uncertainty head).

    Returns:
        Gradient with respect to inputs, or None when inputs is not given.

    Raises:
        DisconnectedLossError: If the loss has a graph that reaches no parameter.
    """
    params = [p for m in (model, *extra) for p in m.parameters()]
    targets = params + ([inputs] if inputs is not None else [])

    if not loss.requires_grad:
        logger.warning("Loss carries no gradient; all gradients set to zero")
        for p in params:
            p.grad = torch.zeros_like(p)
        return torch.zeros_like(inputs) if inputs is not None else None

    grads = torch.autograd.grad(loss, targets, allow_unused=True)
    if all(g is None for g in grads[:len(params)]):
        raise DisconnectedLossError("Loss does not depend on any model parameter")

    for p, g in zip(params, grads):
        p.grad = torch.zeros_like(p) if g is None else g.detach()
    if inputs is None:
        return None
    input_grad = grads[-1]
    return torch.zeros_like(inputs) if input_grad is None else input_grad.detach()
