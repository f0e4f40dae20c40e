"""
Mixed-sample generation for Mixup, CutMix, FMix, SaliencyMix and ResizeMix.

Every mixer follows the convention mixed = mask * x_a + (1 - mask) * x_b, so
the mask and lam_nominal always measure the x_a share. Cutting mixers
recompute lam_nominal from the realized mask after clipping, so that
mean(mask) == lam_nominal holds exactly.

All randomness comes from a numpy Generator passed by the caller; a fixed
seed gives bit-identical permutations, ratios and masks.
"""

import math
from dataclasses import replace
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from ..config.settings import MixConfig
from .errors import InvalidParameterError, ShapeMismatchError
from .models import MixMethod, MixResult


def _check_lam(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise InvalidParameterError(f"lam must lie in [0, 1], got {lam}")
    return lam


def _check_pair(x_a: torch.Tensor, x_b: torch.Tensor) -> None:
    if x_a.ndim != 4:
        raise ShapeMismatchError(f"Expected N×C×H×W batches, got shape {tuple(x_a.shape)}")
    if x_a.shape != x_b.shape:
        raise ShapeMismatchError(f"Batch shapes differ: {tuple(x_a.shape)} vs {tuple(x_b.shape)}")


def _result(x_a: torch.Tensor, mixed: torch.Tensor, mask: torch.Tensor, lam: float,
            method: MixMethod) -> MixResult:
    return MixResult(
        mixed=mixed,
        mask=mask,
        lam_nominal=mask.to(torch.float64).mean(dim=(1, 2)),
        perm=torch.arange(x_a.shape[0]),
        lam=lam,
        method=method,
    )


def _paste(x_a: torch.Tensor, x_b: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    # binary selection keeps every pixel bit-identical to one of the parents
    return torch.where(mask.bool().unsqueeze(1), x_a, x_b)


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """
    Draw a mixing ratio from Beta(alpha, alpha).

    Args:
        alpha: Concentration, strictly positive.
        rng: Random stream.

    Returns:
        A ratio in [0, 1].

    Raises:
        InvalidParameterError: If alpha <= 0.
    """
    if not alpha > 0:
        raise InvalidParameterError(f"alpha must be > 0, got {alpha}")
    return float(rng.beta(alpha, alpha))


def mixup_interpolate(x_a: torch.Tensor, x_b: torch.Tensor, lam: float) -> MixResult:
    """
    Pixel-wise convex combination lam * x_a + (1 - lam) * x_b.

    Args:
        x_a: First batch.
        x_b: Second batch, same shape.
        lam: Share of x_a.

    Returns:
        MixResult whose mask is the constant lam.
    """
    _check_pair(x_a, x_b)
    lam = _check_lam(lam)
    mixed = lam * x_a + (1.0 - lam) * x_b
    n, _, h, w = x_a.shape
    mask = torch.full((n, h, w), lam, dtype=x_a.dtype, device=x_a.device)
    result = _result(x_a, mixed, mask, lam, MixMethod.MIXUP)
    result.lam_nominal = torch.full((n,), lam, dtype=torch.float64)
    return result


def box_side(size: int, lam: float) -> int:
    """Side length round(size * sqrt(lam)), rounding halves up."""
    return int(math.floor(size * math.sqrt(lam) + 0.5))


def box_bounds(height: int, width: int, lam: float, center_y: int, center_x: int) -> tuple[int, int, int, int]:
    """
    Rectangle of area ~lam * H * W centred on a pixel, clipped to the image.

    Returns:
        (y1, y2, x1, x2) half-open bounds.
    """
    r_h, r_w = box_side(height, lam), box_side(width, lam)
    y1, x1 = center_y - r_h // 2, center_x - r_w // 2
    return (
        int(np.clip(y1, 0, height)), int(np.clip(y1 + r_h, 0, height)),
        int(np.clip(x1, 0, width)), int(np.clip(x1 + r_w, 0, width)),
    )


def _box_masks(x_a: torch.Tensor, lam: float, centers: np.ndarray) -> torch.Tensor:
    n, _, h, w = x_a.shape
    mask = torch.zeros((n, h, w), dtype=x_a.dtype, device=x_a.device)
    for i, (cy, cx) in enumerate(centers):
        y1, y2, x1, x2 = box_bounds(h, w, lam, int(cy), int(cx))
        mask[i, y1:y2, x1:x2] = 1
    return mask


def cutmix(x_a: torch.Tensor, x_b: torch.Tensor, lam: float, rng: np.random.Generator,
           centers: Optional[np.ndarray] = None) -> MixResult:
    """
    Paste a rectangle of x_a into x_b.

    The rectangle has sides round(W*sqrt(lam)) x round(H*sqrt(lam)), a centre
    drawn uniformly per sample, and is clipped to the image.

    Args:
        x_a: Source of the rectangle content.
        x_b: Background batch.
        lam: Nominal share of x_a.
        rng: Random stream for the centres.
        centers: Optional N×2 (row, column) centres overriding the random draw.

    Returns:
        MixResult with a binary mask and lam_nominal = realized area fraction.
    """
    _check_pair(x_a, x_b)
    lam = _check_lam(lam)
    n, _, h, w = x_a.shape
    if centers is None:
        centers = np.stack([rng.integers(0, h, size=n), rng.integers(0, w, size=n)], axis=1)
    mask = _box_masks(x_a, lam, np.asarray(centers))
    return _result(x_a, _paste(x_a, x_b, mask), mask, lam, MixMethod.CUTMIX)


def resizemix(x_a: torch.Tensor, x_b: torch.Tensor, lam: float, rng: np.random.Generator,
              offsets: Optional[np.ndarray] = None) -> MixResult:
    """
    Shrink x_a bilinearly and paste it into x_b.

    Args:
        x_a: Batch that gets resized to round(H*sqrt(lam)) x round(W*sqrt(lam)).
        x_b: Background batch.
        lam: Nominal share of x_a.
        rng: Random stream for the paste positions.
        offsets: Optional N×2 (top, left) positions overriding the random draw.

    Returns:
        MixResult whose mask is the paste rectangle.
    """
    _check_pair(x_a, x_b)
    lam = _check_lam(lam)
    n, _, h, w = x_a.shape
    r_h, r_w = box_side(h, lam), box_side(w, lam)
    mixed = x_b.clone()
    mask = torch.zeros((n, h, w), dtype=x_a.dtype, device=x_a.device)
    if r_h > 0 and r_w > 0:
        if (r_h, r_w) == (h, w):
            patch = x_a
        else:
            patch = F.interpolate(x_a, size=(r_h, r_w), mode="bilinear", align_corners=True)
        if offsets is None:
            offsets = np.stack([rng.integers(0, h - r_h + 1, size=n),
                                rng.integers(0, w - r_w + 1, size=n)], axis=1)
        for i, (top, left) in enumerate(np.asarray(offsets)):
            top, left = int(top), int(left)
            mixed[i, :, top:top + r_h, left:left + r_w] = patch[i]
            mask[i, top:top + r_h, left:left + r_w] = 1
    return _result(x_a, mixed, mask, lam, MixMethod.RESIZEMIX)


def _low_frequency_field(height: int, width: int, decay: float, rng: np.random.Generator) -> np.ndarray:
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    freqs = np.sqrt(fx * fx + fy * fy)
    # the DC bin borrows the weight of the lowest non-zero frequency
    scale = 1.0 / np.maximum(freqs, 1.0 / max(width, height)) ** decay
    spectrum = scale * (rng.standard_normal(freqs.shape) + 1j * rng.standard_normal(freqs.shape))
    return np.fft.irfft2(spectrum, s=(height, width))


def fmix_mask(width: int, height: int, lam: float, decay: float, rng: np.random.Generator,
              count: int = 1) -> torch.Tensor:
    """
    Binary masks from thresholded low-frequency noise.

    Each mask keeps exactly ceil(lam * W * H) ones: the largest values of a
    1/f^decay filtered Gaussian field, ties broken in raster order.

    Args:
        width: W.
        height: H.
        lam: Target ones fraction.
        decay: Frequency decay power, strictly positive.
        rng: Random stream for the spectra.
        count: Number of independent masks.

    Returns:
        count×H×W float32 tensor of zeros and ones.
    """
    lam = _check_lam(lam)
    if not decay > 0:
        raise InvalidParameterError(f"decay must be > 0, got {decay}")
    pixels = width * height
    ones = min(max(math.ceil(lam * width * height), 0), pixels)
    masks = np.zeros((count, pixels), dtype=np.float32)
    for i in range(count):
        field = _low_frequency_field(height, width, decay, rng)
        order = np.argsort(-field.ravel(), kind="stable")
        masks[i, order[:ones]] = 1.0
    return torch.from_numpy(masks.reshape(count, height, width))


def fmix(x_a: torch.Tensor, x_b: torch.Tensor, lam: float, rng: np.random.Generator,
         decay: float = 3.0) -> MixResult:
    """FMix with one independent mask per sample."""
    _check_pair(x_a, x_b)
    lam = _check_lam(lam)
    n, _, h, w = x_a.shape
    mask = fmix_mask(w, h, lam, decay, rng, count=n).to(dtype=x_a.dtype, device=x_a.device)
    return _result(x_a, _paste(x_a, x_b, mask), mask, lam, MixMethod.FMIX)


def saliency_map(image, sigma: float = 1.0) -> np.ndarray:
    """
    Spectral-residual saliency of a single image.

    Args:
        image: C×H×W (or H×W) tensor or array.
        sigma: Gaussian smoothing of the squared reconstruction, in pixels.

    Returns:
        H×W float64 array scaled to [0, 1]; all zeros for constant input.
    """
    array = image.detach().cpu().numpy() if torch.is_tensor(image) else np.asarray(image)
    array = array.astype(np.float64)
    gray = array.mean(axis=0) if array.ndim == 3 else array
    if np.ptp(gray) == 0:
        return np.zeros_like(gray)

    spectrum = np.fft.fft2(gray)
    log_amplitude = np.log(np.abs(spectrum) + 1e-12)
    residual = log_amplitude - ndimage.uniform_filter(log_amplitude, size=3, mode="wrap")
    recon = np.fft.ifft2(np.exp(residual + 1j * np.angle(spectrum)))
    saliency = ndimage.gaussian_filter(np.abs(recon) ** 2, sigma=sigma, mode="nearest")

    saliency -= saliency.min()
    peak = saliency.max()
    if peak <= 0:
        return np.zeros_like(gray)
    return saliency / peak


def saliency_peak(image) -> tuple[int, int]:
    """(row, column) of the saliency maximum, first in raster order."""
    saliency = saliency_map(image)
    row, col = np.unravel_index(int(np.argmax(saliency)), saliency.shape)
    return int(row), int(col)


def saliencymix(x_a: torch.Tensor, x_b: torch.Tensor, lam: float,
                rng: Optional[np.random.Generator] = None) -> MixResult:
    """
    CutMix whose rectangle is centred on the saliency peak of x_a.

    Args:
        x_a: Source batch; its saliency decides the rectangle position.
        x_b: Background batch.
        lam: Nominal share of x_a.
        rng: Accepted for interface parity with the other mixers; placement is deterministic.

    Returns:
        MixResult with a binary mask and lam_nominal = realized area fraction.
    """
    _check_pair(x_a, x_b)
    lam = _check_lam(lam)
    centers = np.array([saliency_peak(img) for img in x_a], dtype=np.int64).reshape(-1, 2)
    mask = _box_masks(x_a, lam, centers)
    return _result(x_a, _paste(x_a, x_b, mask), mask, lam, MixMethod.SALIENCYMIX)


def mix_batch(images: torch.Tensor, config: MixConfig, rng: np.random.Generator,
              lam: Optional[float] = None) -> MixResult:
    """
    Mix a batch with a random permutation of itself.

    One lam is drawn per batch (unless given); partners come from a uniform
    permutation, self-pairing allowed.

    Args:
        images: N×C×H×W batch (x_a).
        config: Mixer choice and parameters.
        rng: Random stream; drawn in the order permutation, lam, mixer.
        lam: Optional fixed ratio.

    Returns:
        MixResult with perm and lam filled in.
    """
    perm = torch.as_tensor(rng.permutation(images.shape[0]), dtype=torch.long)
    if lam is None:
        lam = sample_lambda(config.alpha, rng)
    result = mix_pair(images, images[perm], config, lam, rng)
    return replace(result, perm=perm)


def mix_pair(x_a: torch.Tensor, x_b: torch.Tensor, config: MixConfig, lam: float,
             rng: np.random.Generator) -> MixResult:
    """Apply the configured mixer to explicit partner batches."""
    method = MixMethod(config.method)
    if method is MixMethod.MIXUP:
        return mixup_interpolate(x_a, x_b, lam)
    if method is MixMethod.CUTMIX:
        return cutmix(x_a, x_b, lam, rng)
    if method is MixMethod.FMIX:
        return fmix(x_a, x_b, lam, rng, decay=config.fmix_decay)
    if method is MixMethod.SALIENCYMIX:
        return saliencymix(x_a, x_b, lam, rng)
    return resizemix(x_a, x_b, lam, rng)
