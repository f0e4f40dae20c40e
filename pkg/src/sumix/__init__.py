"""
sumix - Mixup augmentation with recomputed mixing ratios and uncertainty gating.

This package provides mixers (Mixup, CutMix, FMix, SaliencyMix, ResizeMix),
a small encoder, the SUMix loss, and a training and evaluation harness.
"""

__version__ = "0.1.0"
