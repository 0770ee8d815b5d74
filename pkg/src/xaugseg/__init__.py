"""Extreme-augmentation segmentation pipeline with a numpy residual U-Net."""
from .augment import AffineParams, AugmentConfig, apply_affine, augment_dataset, sample_params
from .metrics import dice_score, mean_dice
from .patching import Patch, PatchSet, TilingConfig, extract_patches, stitch
from .phantom import PhantomConfig, generate_phantom
from .preprocess import intensity_match, resample_axial
from .volume_io import MaskVolume, Volume3D, read_nifti, write_nifti

__version__ = "0.1.0"
