"""Residual U-Net, soft-Dice objective, Adam and the training loop."""
from .checkpoint import dump_checkpoint, load_checkpoint, parse_checkpoint, save_checkpoint
from .loss import DiceLossConfig, batch_soft_dice_loss, soft_dice, soft_dice_loss
from .network import NetworkConfig, ResidualUNet, unet_forward
from .optim import AdamConfig, AdamState, adam_step
from .train import TrainConfig, predict_volume, train

__all__ = [
    "AdamConfig",
    "AdamState",
    "DiceLossConfig",
    "NetworkConfig",
    "ResidualUNet",
    "TrainConfig",
    "adam_step",
    "batch_soft_dice_loss",
    "dump_checkpoint",
    "load_checkpoint",
    "parse_checkpoint",
    "predict_volume",
    "save_checkpoint",
    "soft_dice",
    "soft_dice_loss",
    "train",
    "unet_forward",
]
