"""Focal and dice losses over valid timestamps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyMaskError, ShapeError

PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class LossConfig:
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_eps: float = 1.0
    dice_weight: float = 1.0


def _check(probs: Tensor, labels: np.ndarray, mask: np.ndarray):
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if probs.data.shape != labels.shape or labels.shape != mask.shape:
        raise ShapeError(
            f"probs {probs.data.shape}, labels {labels.shape}, mask {mask.shape}"
        )
    valid = float(mask.sum())
    if valid == 0.0:
        raise EmptyMaskError("loss over an all-zero mask")
    return labels, mask, valid


def focal_loss(
    probs: Tensor, labels: np.ndarray, mask: np.ndarray, cfg: LossConfig
) -> Tensor:
    """Mean focal term over valid timestamps; probabilities are clamped away
    from {0, 1} before the logs."""
    labels, mask, valid = _check(probs, labels, mask)
    p = ad.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    pos_weight = cfg.focal_alpha * labels * mask
    neg_weight = (1.0 - cfg.focal_alpha) * (1.0 - labels) * mask
    pos = ((1.0 - p) ** cfg.focal_gamma) * ad.log(p) * pos_weight
    neg = (p**cfg.focal_gamma) * ad.log(1.0 - p) * neg_weight
    return ad.sum_all(pos + neg) * (-1.0 / valid)


def dice_loss(
    probs: Tensor, labels: np.ndarray, mask: np.ndarray, cfg: LossConfig
) -> Tensor:
    """One minus the smoothed overlap of probabilities and labels."""
    labels, mask, _ = _check(probs, labels, mask)
    p = ad.mul_const(probs, mask)
    overlap = ad.sum_all(p * (labels * mask)) * 2.0 + cfg.dice_eps
    total = ad.sum_all(p) + float((labels * mask).sum()) + cfg.dice_eps
    return 1.0 - overlap / total


def total_loss(
    probs: Tensor, labels: np.ndarray, mask: np.ndarray, cfg: LossConfig
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (total, focal, dice); total = focal + dice_weight * dice."""
    focal = focal_loss(probs, labels, mask, cfg)
    dice = dice_loss(probs, labels, mask, cfg)
    return ad.add(focal, ad.mul_const(dice, cfg.dice_weight)), focal, dice
