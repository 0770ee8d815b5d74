"""Soft Dice objective.

For probabilities ``p`` and labels ``g``::

    D = (2 * sum(p * g) + eps) / (sum(p) + sum(g) + eps),   loss = 1 - D
    dD/dp_k = (2 * g_k * den - num) / den**2
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch


@dataclass(frozen=True)
class DiceLossConfig:
    epsilon: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def _terms(pred, target, eps):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    num = 2.0 * np.sum(pred * target) + eps
    den = np.sum(pred) + np.sum(target) + eps
    return pred, target, num, den


def soft_dice(pred, target, eps: float = 1.0) -> float:
    _, _, num, den = _terms(pred, target, eps)
    return float(num / den)


def soft_dice_loss(pred, target, eps: float = 1.0) -> tuple[float, np.ndarray]:
    """``(1 - D, dloss/dpred)`` over every element of ``pred``."""
    _, target, num, den = _terms(pred, target, eps)
    grad = -(2.0 * target * den - num) / den**2
    return float(1.0 - num / den), grad


def batch_soft_dice_loss(pred, target, eps: float = 1.0) -> tuple[float, float, np.ndarray]:
    """Mean per-sample loss over the leading axis.

    Returns ``(mean loss, mean Dice, gradient)``; the gradient is that of the
    mean loss, so each sample's contribution is scaled by ``1 / N``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    n = pred.shape[0]
    axes = tuple(range(1, pred.ndim))
    num = 2.0 * np.sum(pred * target, axis=axes) + eps
    den = np.sum(pred, axis=axes) + np.sum(target, axis=axes) + eps
    dice = num / den
    shape = (n,) + (1,) * (pred.ndim - 1)
    grad = -(2.0 * target * den.reshape(shape) - num.reshape(shape)) / (den.reshape(shape) ** 2 * n)
    return float(1.0 - dice.mean()), float(dice.mean()), grad
