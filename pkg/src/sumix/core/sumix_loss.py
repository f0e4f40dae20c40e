"""
SUMix: recomputed mixing ratios and an uncertainty-gated regularizer.

For a mixed sample x~ of parents (x_a, x_b) with nominal ratio lam:

    d_p       = || softmax(z~ - z_p) ||_2                  feature distance
    lam~_a    = lam e^{-d_a} / (lam e^{-d_a} + (1 - lam) e^{-d_b}),  lam~_b = 1 - lam~_a
    u(z)      = || softmax(W z + b) ||_2                   uncertainty head
    beta_p    = u(z~) + u(z_p)
    Z_p       = exp(-(beta_p + d_p))
    Z_su      = lam~_a Z_a + lam~_b Z_b

    term1     = MCE(logits, y_a, y_b; lam~_a, lam~_b)
    term2     = MCE(Z_su * logits, y_a, y_b; lam, 1 - lam)
    total     = term1 + zeta * term2

Raw parent features z_a, z_b are computed without gradient and lam~ is
detached before it weights the labels.
"""

from typing import Optional, Union

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import Encoder, raw_features
from .errors import InvalidLabelError, InvalidParameterError, ShapeMismatchError
from .models import DetachedTerms, LossMode, LossReport, MixResult, SUMixState

DEFAULT_HEAD_DIM = 16


def softmax_norm(values: torch.Tensor) -> torch.Tensor:
    """Euclidean norm of the softmax over the last dimension; lies in [1/sqrt(n), 1)."""
    return torch.linalg.vector_norm(torch.softmax(values, dim=-1), dim=-1)


class UncertaintyHead(nn.Module):
    """Affine map d -> m followed by softmax and L2 norm."""

    def __init__(self, feature_dim: int, head_dim: int = DEFAULT_HEAD_DIM):
        super().__init__()
        if head_dim < 2:
            raise InvalidParameterError(f"head_dim must be >= 2, got {head_dim}")
        self.head_dim = head_dim
        self.linear = nn.Linear(feature_dim, head_dim)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return softmax_norm(self.linear(features))


def feature_distance(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    """
    Softmax-norm distance between feature vectors.

    Args:
        z1: (..., d) features.
        z2: (..., d) features, same shape.

    Returns:
        (...) distances in [1/sqrt(d), 1).

    Raises:
        ShapeMismatchError: If the shapes differ.
    """
    if z1.shape != z2.shape:
        raise ShapeMismatchError(f"Feature shapes differ: {tuple(z1.shape)} vs {tuple(z2.shape)}")
    return softmax_norm(z1 - z2)


def _lam_tensor(lam, like: torch.Tensor) -> torch.Tensor:
    lam = torch.as_tensor(lam, dtype=like.dtype, device=like.device)
    if torch.any(lam < 0) or torch.any(lam > 1):
        raise InvalidParameterError("lam must lie in [0, 1]")
    return lam


def recompute_lambda(
    z_tilde: torch.Tensor,
    z_a: torch.Tensor,
    z_b: torch.Tensor,
    lam: Union[float, torch.Tensor],
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Reweight the nominal ratio by how close the mixed features are to each parent.

    Args:
        z_tilde: Features of the mixed samples.
        z_a: Features of parent a.
        z_b: Features of parent b.
        lam: Nominal share of parent a, scalar or per sample.

    Returns:
        (lam_tilde_a, lam_tilde_b), detached, summing to one.
    """
    lam = _lam_tensor(lam, z_tilde)
    with torch.no_grad():
        weight_a = lam * torch.exp(-feature_distance(z_tilde, z_a))
        weight_b = (1.0 - lam) * torch.exp(-feature_distance(z_tilde, z_b))
        lam_tilde_a = weight_a / (weight_a + weight_b)
    return lam_tilde_a, 1.0 - lam_tilde_a


def uncertainty(features: torch.Tensor, head: UncertaintyHead) -> torch.Tensor:
    """Uncertainty u = ||softmax(head(z))||_2; differentiable in the head and the features."""
    return head(features)


def z_su_gate(
    z_tilde: torch.Tensor,
    z_a: torch.Tensor,
    z_b: torch.Tensor,
    lam_tilde_a: torch.Tensor,
    lam_tilde_b: torch.Tensor,
    head: UncertaintyHead,
    mode: LossMode = LossMode.FULL_SU,
) -> SUMixState:
    """
    Per-sample confidence gate in (0, 1).

    semantic_only keeps only the distance in the exponent, uncertainty_only
    only beta; every other mode uses both.

    Returns:
        SUMixState holding the gate and its intermediate terms.
    """
    mode = LossMode(mode)
    u_tilde = uncertainty(z_tilde, head)
    u_a = uncertainty(z_a, head)
    u_b = uncertainty(z_b, head)
    dist_a = feature_distance(z_tilde, z_a)
    dist_b = feature_distance(z_tilde, z_b)
    beta_a = u_tilde + u_a
    beta_b = u_tilde + u_b

    if mode is LossMode.SEMANTIC_ONLY:
        exponent_a, exponent_b = dist_a, dist_b
    elif mode is LossMode.UNCERTAINTY_ONLY:
        exponent_a, exponent_b = beta_a, beta_b
    else:
        exponent_a, exponent_b = beta_a + dist_a, beta_b + dist_b

    z_su = lam_tilde_a * torch.exp(-exponent_a) + lam_tilde_b * torch.exp(-exponent_b)
    return SUMixState(
        lam_tilde_a=lam_tilde_a, lam_tilde_b=lam_tilde_b,
        dist_a=dist_a, dist_b=dist_b,
        u_tilde=u_tilde, u_a=u_a, u_b=u_b,
        beta_a=beta_a, beta_b=beta_b,
        z_su=z_su,
    )


def as_one_hot(labels: torch.Tensor, num_classes: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    Turn class indices (N) or one-hot rows (N×K) into N×K float targets.

    Raises:
        InvalidLabelError: On out-of-range indices or a wrong one-hot width.
    """
    if labels.ndim == 1:
        if labels.is_floating_point():
            raise InvalidLabelError("Class-index labels must be integers")
        if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
            raise InvalidLabelError(f"Labels must lie in [0, {num_classes})")
        return F.one_hot(labels.long(), num_classes).to(dtype)
    if labels.ndim == 2 and labels.shape[1] == num_classes:
        return labels.to(dtype)
    raise InvalidLabelError(f"Expected N or N×{num_classes} labels, got shape {tuple(labels.shape)}")


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Per-sample -sum(targets * log_softmax(logits))."""
    return -(targets * torch.log_softmax(logits, dim=-1)).sum(dim=-1)


def mce_loss(
    logits: torch.Tensor,
    y_a: torch.Tensor,
    y_b: torch.Tensor,
    w_a: Union[float, torch.Tensor],
    w_b: Optional[Union[float, torch.Tensor]] = None,
) -> torch.Tensor:
    """
    Mixed cross-entropy: mean over the batch of w_a CE(y_a) + w_b CE(y_b).

    Args:
        logits: N×K logits.
        y_a: Labels of parent a (indices or one-hot).
        y_b: Labels of parent b.
        w_a: Per-sample (or scalar) weight of parent a.
        w_b: Weight of parent b; 1 - w_a when omitted.

    Returns:
        Scalar loss.

    Raises:
        InvalidParameterError: If w_a + w_b differs from 1.
        InvalidLabelError: On invalid labels.
    """
    num_classes = logits.shape[-1]
    w_a = torch.as_tensor(w_a, dtype=logits.dtype, device=logits.device)
    w_b = 1.0 - w_a if w_b is None else torch.as_tensor(w_b, dtype=logits.dtype, device=logits.device)
    if torch.any((w_a + w_b - 1.0).abs() > 1e-6):
        raise InvalidParameterError("Label weights must sum to 1 per sample")
    ce_a = cross_entropy(logits, as_one_hot(y_a, num_classes, logits.dtype))
    ce_b = cross_entropy(logits, as_one_hot(y_b, num_classes, logits.dtype))
    return (w_a * ce_a + w_b * ce_b).mean()


def sumix_loss(
    model: Encoder,
    head: UncertaintyHead,
    mix: MixResult,
    raw_images: torch.Tensor,
    labels: torch.Tensor,
    zeta: float,
    mode: LossMode = LossMode.FULL_SU,
    detached: Optional[DetachedTerms] = None,
) -> LossReport:
    """
    Assemble the loss of one mixed batch.

    Args:
        model: Encoder in its current (training) state.
        head: Uncertainty head.
        mix: Mixed batch; mix.perm maps every sample to its partner.
        raw_images: Unmixed batch x_a (partners are raw_images[mix.perm]).
        labels: Labels of raw_images, indices or one-hot.
        zeta: Regularizer weight, strictly positive.
        mode: Which terms take part.
        detached: Precomputed raw features and lam~; computed here when None.

    Returns:
        LossReport; only total is meant to be backpropagated.

    Raises:
        InvalidParameterError: If zeta <= 0.
    """
    if not zeta > 0:
        raise InvalidParameterError(f"zeta must be > 0, got {zeta}")
    mode = LossMode(mode)

    z_tilde, logits = model(mix.mixed)
    targets = as_one_hot(labels, logits.shape[-1], logits.dtype)
    y_a, y_b = targets, targets[mix.perm]
    lam = _lam_tensor(mix.lam_nominal, logits)
    zero = logits.new_zeros(())

    if not mode.uses_recomputed_lambda:
        term1 = mce_loss(logits, y_a, y_b, lam, 1.0 - lam)
        return LossReport(mode, zeta, term1, zero, term1 + zeta * zero, mix.lam_nominal)

    if detached is None:
        raw = raw_features(model, raw_images)
        lam_tilde_a, lam_tilde_b = recompute_lambda(z_tilde.detach(), raw, raw[mix.perm], lam)
        detached = DetachedTerms(raw, lam_tilde_a, lam_tilde_b)
    z_a = detached.raw_features
    z_b = detached.raw_features[mix.perm]

    term1 = mce_loss(logits, y_a, y_b, detached.lam_tilde_a, detached.lam_tilde_b)

    if mode.uses_regularizer:
        state = z_su_gate(z_tilde, z_a, z_b, detached.lam_tilde_a, detached.lam_tilde_b, head, mode)
        gated = state.z_su.unsqueeze(-1) * logits
        term2 = mce_loss(gated, y_a, y_b, lam, 1.0 - lam)
    else:
        with torch.no_grad():
            state = z_su_gate(z_tilde, z_a, z_b, detached.lam_tilde_a, detached.lam_tilde_b, head)
        term2 = zero

    return LossReport(
        mode=mode, zeta=zeta, term1=term1, term2=term2, total=term1 + zeta * term2,
        lam_nominal=mix.lam_nominal, state=state, detached=detached,
    )
