"""Segmentation-quality scoring for externally produced masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ValidationError
from .masks import BinaryMask

_CLIP = 1e-7


@dataclass(frozen=True)
class SoftMask:
    """Per-pixel foreground probability grid."""

    probabilities: np.ndarray  # (H, W) float64 in [0, 1]

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"soft mask must be a nonempty 2-D grid, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValidationError("soft mask contains non-finite values")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValidationError("soft mask probabilities must lie in [0, 1]")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @property
    def height(self) -> int:
        return self.probabilities.shape[0]

    @property
    def width(self) -> int:
        return self.probabilities.shape[1]


def cross_entropy(pred: SoftMask, gt: BinaryMask) -> float:
    """Mean per-pixel binary cross-entropy, probabilities clipped to [1e-7, 1 - 1e-7]."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ArgumentError(
            f"dimension mismatch: {pred.height}x{pred.width} vs {gt.height}x{gt.width}"
        )
    p = np.clip(pred.probabilities, _CLIP, 1.0 - _CLIP)
    g = gt.bits.astype(np.float64)
    return float(-np.mean(g * np.log(p) + (1.0 - g) * np.log(1.0 - p)))


def dice_loss(pred: SoftMask, gt: BinaryMask, epsilon: float = 1.0) -> float:
    """Soft Dice loss with additive smoothing epsilon."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ArgumentError(
            f"dimension mismatch: {pred.height}x{pred.width} vs {gt.height}x{gt.width}"
        )
    p = pred.probabilities
    g = gt.bits.astype(np.float64)
    dice = (2.0 * float((p * g).sum()) + epsilon) / (float(p.sum()) + float(g.sum()) + epsilon)
    return 1.0 - dice


def composite_loss(pred: SoftMask, gt: BinaryMask, lam: float, epsilon: float = 1.0) -> float:
    """Weighted blend lam * CE + (1 - lam) * DiceLoss."""
    if not (0.0 <= lam <= 1.0):
        raise ArgumentError(f"lambda must lie in [0, 1], got {lam}")
    ce = cross_entropy(pred, gt) if lam > 0.0 else 0.0
    dl = dice_loss(pred, gt, epsilon) if lam < 1.0 else 0.0
    return lam * ce + (1.0 - lam) * dl


def dice_score(pred: BinaryMask, gt: BinaryMask) -> float:
    """Dice overlap 2|a n b| / (|a| + |b|); two empty masks score 1.0."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ArgumentError(
            f"dimension mismatch: {pred.height}x{pred.width} vs {gt.height}x{gt.width}"
        )
    inter = int((pred.bits & gt.bits).sum())
    total = pred.popcount + gt.popcount
    if total == 0:
        return 1.0
    return 2.0 * inter / total
