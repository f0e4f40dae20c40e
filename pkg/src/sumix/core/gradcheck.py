"""
Central finite-difference verification of autograd gradients.

Run it in double precision: with eps = 1e-6 the central difference of a
float32 loss is dominated by rounding.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..infrastructure.logging_config import get_logger

logger = get_logger(__name__)

RELATIVE_FLOOR = 1e-4
"""Denominator floor so that vanishing gradients are compared in absolute terms."""


@dataclass
class GradCheckResult:
    """Outcome of a finite-difference check."""

    max_relative_error: float
    analytic: list[float] = field(default_factory=list)
    numeric: list[float] = field(default_factory=list)
    locations: list[tuple[int, int]] = field(default_factory=list)
    """(parameter index, flat element index) of every probed entry."""

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error <= tolerance


def relative_error(analytic: float, numeric: float, floor: float = RELATIVE_FLOOR) -> float:
    """|a - n| / max(|a|, |n|, floor)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    parameters: Sequence[torch.Tensor],
    rng: np.random.Generator,
    count: int = 20,
    eps: float = 1e-6,
) -> GradCheckResult:
    """
    Compare autograd gradients with central differences on random entries.

    loss_fn is evaluated once for the analytic gradient and twice per probed
    entry; it must be a deterministic function of the parameters.

    Args:
        loss_fn: Closure returning a scalar loss.
        parameters: Leaf tensors to probe.
        rng: Random stream choosing the entries.
        count: Number of probed scalar entries.
        eps: Perturbation size.

    Returns:
        GradCheckResult with the maximum relative error.
    """
    parameters = list(parameters)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, parameters, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(parameters, grads)]

    sizes = np.array([p.numel() for p in parameters], dtype=np.float64)
    result = GradCheckResult(max_relative_error=0.0)
    for _ in range(count):
        index = int(rng.choice(len(parameters), p=sizes / sizes.sum()))
        element = int(rng.integers(0, parameters[index].numel()))
        flat = parameters[index].data.view(-1)
        original = flat[element].item()
        with torch.no_grad():
            flat[element] = original + eps
            plus = loss_fn().item()
            flat[element] = original - eps
            minus = loss_fn().item()
            flat[element] = original

        numeric = (plus - minus) / (2.0 * eps)
        analytic = grads[index].view(-1)[element].item()
        result.analytic.append(analytic)
        result.numeric.append(numeric)
        result.locations.append((index, element))
        result.max_relative_error = max(result.max_relative_error, relative_error(analytic, numeric))

    logger.debug(f"Finite-difference check over {count} entries: max relative error {result.max_relative_error:.3e}")
    return result
