"""Hard Dice overlap between binary segmentations."""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, EmptyCohort
from .volume_io import MaskVolume

MaskLike = Union[MaskVolume, np.ndarray]


def _binary(mask: MaskLike) -> np.ndarray:
    data = mask.data if isinstance(mask, MaskVolume) else np.asarray(mask)
    if not np.isin(data, (0, 1)).all():
        raise ValueError("dice_score expects binary masks")
    return data.astype(bool)


def dice_score(a: MaskLike, b: MaskLike) -> float:
    """``2|A & B| / (|A| + |B|)``; two empty masks score 1.0."""
    a, b = _binary(a), _binary(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes {a.shape} and {b.shape} differ")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def slice_dice(a: MaskLike, b: MaskLike) -> float:
    """Mean of per-axial-slice Dice scores."""
    a, b = _binary(a), _binary(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes {a.shape} and {b.shape} differ")
    return float(np.mean([dice_score(a[:, :, z], b[:, :, z]) for z in range(a.shape[2])]))


def mean_dice(pred: Sequence[MaskLike], truth: Sequence[MaskLike], per_slice: bool = False) -> float:
    if len(pred) != len(truth):
        raise DimensionMismatch(f"{len(pred)} predictions for {len(truth)} ground-truth masks")
    if not pred:
        raise EmptyCohort("no volumes to score")
    score = slice_dice if per_slice else dice_score
    # plain left-to-right sum keeps the mean reproducible
    total = 0.0
    for p, t in zip(pred, truth):
        total += score(p, t)
    return total / len(pred)
