"""Segmentation and likelihood-head losses.

Each loss returns ``(value, grad)`` where ``grad`` is d(value)/d(pred) with the
same shape as ``pred``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GDL_EPS = 1e-6
BCE_CLAMP = 1e-7
DEFAULT_LAMBDA = 1.0


def _check_shapes(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target shape {target.shape}")


def generalized_dice_loss(pred, target, eps=GDL_EPS):
    """Two-class generalized Dice loss on foreground probabilities.

    Background probabilities are ``1 - pred``; class weights ``1/((sum r)^2 + eps)``
    depend on the target only and are held constant when differentiating.
    """
    _check_shapes(pred, target)
    p = np.asarray(pred, dtype=np.float64)
    r = np.asarray(target, dtype=np.float64)
    w_fg = 1.0 / (r.sum() ** 2 + eps)
    w_bg = 1.0 / ((1.0 - r).sum() ** 2 + eps)
    intersect = w_fg * (r * p).sum() + w_bg * ((1.0 - r) * (1.0 - p)).sum()
    union = w_fg * (r + p).sum() + w_bg * ((1.0 - r) + (1.0 - p)).sum()
    loss = 1.0 - 2.0 * intersect / union
    d_intersect = w_fg * r - w_bg * (1.0 - r)
    d_union = w_fg - w_bg
    grad = -2.0 * (d_intersect * union - intersect * d_union) / union**2
    return float(loss), grad.astype(pred.dtype, copy=False)


def soft_bce(pred, target):
    """Voxel-mean binary cross-entropy against soft targets in [0, 1]."""
    _check_shapes(pred, target)
    p64 = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    p = np.clip(p64, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n
    inside = (p64 >= BCE_CLAMP) & (p64 <= 1.0 - BCE_CLAMP)
    grad = (p - y) / (p * (1.0 - p)) / n * inside
    return float(loss), grad.astype(pred.dtype, copy=False)


@dataclass(frozen=True)
class LossValue:
    total: float
    seg_component: float
    il_component: float
    lam: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.total, self.seg_component, self.il_component)):
            raise FloatingPointError(f"non-finite loss: {self}")


def combined_loss(pred, y_seg, y_il=None, lam=DEFAULT_LAMBDA):
    """Segmentation loss on channel 0 plus ``lam`` times the likelihood loss on channel 1.

    ``pred`` is (B, C, Z, Y, X). With a single channel the likelihood term is
    skipped, which is only allowed for ``lam == 0`` or when no target is given.
    Returns ``(LossValue, grad)``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    seg, g_seg = generalized_dice_loss(pred[:, 0], y_seg)
    grad = np.zeros_like(pred)
    grad[:, 0] = g_seg
    il = 0.0
    if pred.shape[1] >= 2 and y_il is not None:
        il, g_il = soft_bce(pred[:, 1], y_il)
        grad[:, 1] = lam * g_il
    elif lam > 0 and y_il is not None:
        raise ValueError("likelihood target given but prediction has no likelihood channel")
    elif lam > 0 and pred.shape[1] >= 2:
        raise ValueError("prediction has a likelihood channel but no likelihood target was given")
    return LossValue(seg + lam * il, seg, il, lam), grad
