"""Seeded random-affine augmentation of (image, mask) patch pairs.

Every augmented copy is one draw of rotation, isotropic scale and x/y
translation. The transform is built as

    T = Translate(tx, ty) . Translate(c) . Rotate(angle) . Scale(s) . Translate(-c)

with ``c`` the patch center, so rotation and scaling leave the center fixed.
Output pixel ``q`` takes the input sampled at ``T^-1(q)``: bilinear for the
image, nearest neighbour for the mask, zero outside the patch. There is no
flip in the vocabulary; the linear part always has determinant ``s**2 > 0``.

The random stream for copy ``j`` of pair ``i`` is seeded from
``(seed, i, j)`` alone, which makes a dataset independent of worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch

REFERENCE_PATCH_SIZE = 128
DEFAULT_ANGLE_RANGE = (-20.0, 20.0)
DEFAULT_SCALE_RANGE = (0.8, 1.2)
REFERENCE_TRANSLATION = 50.0


@dataclass(frozen=True)
class AffineParams:
    angle: float = 0.0  # degrees, counter-clockwise in (x, y)
    scale: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def linear(self) -> np.ndarray:
        a = math.radians(self.angle)
        c, s = math.cos(a), math.sin(a)
        return self.scale * np.array([[c, -s], [s, c]])

    def determinant(self) -> float:
        return float(np.linalg.det(self.linear()))


def translation_bound(patch_size: int) -> float:
    """The +/-50 px bound of a 128 px patch, rescaled to ``patch_size`` and rounded half up."""
    return float(math.floor(REFERENCE_TRANSLATION * patch_size / REFERENCE_PATCH_SIZE + 0.5))


@dataclass
class AugmentConfig:
    level: int = 5
    angle_range: tuple[float, float] = DEFAULT_ANGLE_RANGE
    scale_range: tuple[float, float] = DEFAULT_SCALE_RANGE
    translation_range: tuple[float, float] = (-REFERENCE_TRANSLATION, REFERENCE_TRANSLATION)
    seed: int = 0
    include_original: bool = True

    def __post_init__(self):
        self.angle_range = tuple(float(v) for v in self.angle_range)
        self.scale_range = tuple(float(v) for v in self.scale_range)
        self.translation_range = tuple(float(v) for v in self.translation_range)
        self.validate()

    def validate(self) -> None:
        if self.level < 0:
            raise ValueError(f"augmentation level must be >= 0, got {self.level}")
        if self.level == 0 and not self.include_original:
            raise ValueError("level 0 without originals would produce an empty dataset")
        for name in ("angle_range", "scale_range", "translation_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} {lo, hi} is not an interval")
        if self.scale_range[0] <= 0:
            raise ValueError("scale must stay positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def for_patch_size(cls, patch_size: int, **kwargs) -> "AugmentConfig":
        """Default ranges with the translation bound rescaled to ``patch_size``."""
        bound = translation_bound(patch_size)
        kwargs.setdefault("translation_range", (-bound, bound))
        return cls(**kwargs)


def pair_stream(seed: int, pair_index: int, copy_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, pair_index, copy_index])


def sample_params(rng: np.random.Generator, cfg: AugmentConfig) -> AffineParams:
    ranges = (cfg.angle_range, cfg.scale_range, cfg.translation_range, cfg.translation_range)
    # uniform() may round onto the open end; clamp to keep the closed range exact
    angle, scale, tx, ty = (min(max(float(rng.uniform(lo, hi)), lo), hi) for lo, hi in ranges)
    return AffineParams(angle, scale, tx, ty)


def source_coords(shape: tuple[int, int], params: AffineParams) -> tuple[np.ndarray, np.ndarray]:
    """Input coordinates ``T^-1(q)`` for every output pixel ``q``."""
    nx, ny = shape
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    a = math.radians(params.angle)
    c, s = math.cos(a), math.sin(a)
    inv = 1.0 / params.scale
    qx, qy = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64), indexing="ij")
    dx = qx - cx - params.tx
    dy = qy - cy - params.ty
    # inverse of scale*R is R^T / scale
    sx = cx + inv * (c * dx + s * dy)
    sy = cy + inv * (-s * dx + c * dy)
    return sx, sy


def _gather(img: np.ndarray, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    nx, ny = img.shape
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    out = np.zeros(ix.shape, dtype=np.float64)
    out[inside] = img[ix[inside], iy[inside]]
    return out


def sample_bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = (1 - fx) * (1 - fy) * _gather(img, x0, y0)
    # skip neighbours that carry zero weight so exact-grid sampling stays exact
    for ddx, ddy, w in ((1, 0, fx * (1 - fy)), (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        if np.any(w):
            out += w * _gather(img, x0 + ddx, y0 + ddy)
    return out


def sample_nearest(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    return _gather(img, np.floor(sx + 0.5).astype(np.int64), np.floor(sy + 0.5).astype(np.int64))


def apply_affine(image: np.ndarray, mask: np.ndarray, params: AffineParams) -> tuple[np.ndarray, np.ndarray]:
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.shape != mask.shape or image.ndim != 2:
        raise DimensionMismatch(f"image {image.shape} and mask {mask.shape} must be equal 2D shapes")
    sx, sy = source_coords(image.shape, params)
    out_img = sample_bilinear(image.astype(np.float64), sx, sy).astype(image.dtype)
    out_mask = sample_nearest(mask, sx, sy).astype(mask.dtype)
    return out_img, out_mask


def _augment_pair(args):
    index, image, mask, cfg = args
    out = []
    for j in range(cfg.level):
        params = sample_params(pair_stream(cfg.seed, index, j), cfg)
        out.append(apply_affine(image, mask, params))
    return out


def augment_dataset(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]], cfg: AugmentConfig, jobs: Optional[int] = None
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Originals (when ``include_original``) followed by ``level`` copies of each pair in turn."""
    cfg.validate()
    tasks = [(i, img, msk, cfg) for i, (img, msk) in enumerate(pairs)]
    if jobs and jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            copies = list(pool.map(_augment_pair, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        copies = [_augment_pair(t) for t in tasks]
    out = [(np.array(img), np.array(msk)) for img, msk in pairs] if cfg.include_original else []
    for block in copies:
        out.extend(block)
    return out
