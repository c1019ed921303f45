"""Training objectives over (…, L, R, R, R) soft occupancy."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor

SMOOTH = 1.0
BCE_EPS = 1e-7

_SPATIAL = (-3, -2, -1)


def dice_per_level(pred: Tensor, target: Tensor, smooth: float = SMOOTH) -> Tensor:
    """1 − 2·Σ(Ỹ·Y) / (ΣỸ + ΣY + smooth), reduced over the grid only."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    overlap = (pred * target).sum(dim=_SPATIAL)
    total = pred.sum(dim=_SPATIAL) + target.sum(dim=_SPATIAL)
    return 1.0 - 2.0 * overlap / (total + smooth)


def dice_loss(pred: Tensor, target: Tensor, smooth: float = SMOOTH) -> Tensor:
    """Dice loss averaged over levels (and batch)."""
    return dice_per_level(pred, target, smooth).mean()


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    return F.binary_cross_entropy(pred.clamp(BCE_EPS, 1.0 - BCE_EPS), target)


LOSSES = {"dice": dice_loss, "bce": bce_loss}
