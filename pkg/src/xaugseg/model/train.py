"""Mini-batch training loop and whole-volume inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import EmptyDataset
from ..patching import Patch, TilingConfig, extract_patches, stitch
from ..volume_io import MaskVolume, Volume3D
from .loss import batch_soft_dice_loss
from .network import ResidualUNet
from .optim import AdamConfig, AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 8
    adam: AdamConfig = field(default_factory=AdamConfig)
    dice_eps: float = 1.0
    seed: int = 0


def _as_arrays(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        images, masks = dataset
    else:
        if len(dataset) == 0:
            raise EmptyDataset("training set is empty")
        images = np.stack([img for img, _ in dataset])
        masks = np.stack([msk for _, msk in dataset])
    if len(images) == 0:
        raise EmptyDataset("training set is empty")
    return images.astype(np.float32, copy=False), masks.astype(np.float32, copy=False)


def train(
    net: ResidualUNet,
    dataset: Sequence[tuple[np.ndarray, np.ndarray]] | tuple[np.ndarray, np.ndarray],
    epochs: int,
    cfg: TrainConfig | None = None,
    state: AdamState | None = None,
) -> list[float]:
    """Minimize soft-Dice loss; returns the mean batch Dice of every epoch.

    ``dataset`` is a sequence of (image, mask) pairs of shape (P, P), or a
    pair of stacked arrays (n, P, P). Batches are drawn from a permutation
    seeded by ``(cfg.seed, epoch)``.
    """
    cfg = cfg or TrainConfig()
    images, masks = _as_arrays(dataset)
    state = state if state is not None else AdamState()
    n = len(images)
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        dices = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = images[idx][:, None]
            g = masks[idx][:, None]
            prob, cache = net.forward(x)
            _, dice, dprob = batch_soft_dice_loss(prob, g, cfg.dice_eps)
            grads = net.backward(dprob.astype(prob.dtype), cache)
            adam_step(net.params, grads, state, cfg.adam)
            dices.append(dice)
        history.append(float(np.mean(dices)))
        log.debug("epoch %d/%d dice %.4f", epoch + 1, epochs, history[-1])
    return history


def predict_probabilities(net: ResidualUNet, vol: Volume3D, tiling: TilingConfig, batch_size: int = 32) -> np.ndarray:
    nx, ny, nz = vol.dims
    out = np.zeros((nx, ny, nz), dtype=np.float64)
    for z in range(nz):
        patches = extract_patches(vol.data[:, :, z], tiling, z)
        probs = net.predict(np.stack([p.pixels for p in patches])[:, None], batch_size)
        out[:, :, z] = stitch(
            [Patch(prob[0], p.origin, z) for prob, p in zip(probs, patches)],
            (nx, ny),
        )
    return out


def predict_volume(net: ResidualUNet, vol: Volume3D, tiling: TilingConfig, threshold: float = 0.5) -> MaskVolume:
    """Tile each slice, run the network, average overlaps, then keep ``prob > threshold``."""
    prob = predict_probabilities(net, vol, tiling)
    return MaskVolume((prob > threshold).astype(np.uint8), vol.spacing)
