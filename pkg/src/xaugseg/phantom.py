"""Synthetic spine-like phantoms: a stack of ellipsoidal "discs" along y.

Axial (z) slices cut each ellipsoid into an ellipse, so every slice holds a
column of compact bright blobs on a noisy background. The mask is exact
ellipsoid membership; the image is intensity-matched to [0, 1].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigInfeasible
from .preprocess import intensity_match
from .volume_io import MaskVolume, Volume3D


@dataclass
class PhantomConfig:
    dims: tuple[int, int, int] = (64, 64, 12)
    n_discs: int = 5
    semi_axis_x: tuple[float, float] = (8.0, 14.0)
    semi_axis_y: tuple[float, float] = (2.0, 3.5)
    semi_axis_z: tuple[float, float] = (3.0, 6.0)
    gap: tuple[float, float] = (3.0, 5.0)
    background: float = 100.0
    foreground: float = 180.0
    noise_sigma: float = 20.0
    intensity_jitter: tuple[float, float] = (0.8, 1.25)
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        for name in ("semi_axis_x", "semi_axis_y", "semi_axis_z", "gap", "intensity_jitter"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)

    def check(self) -> None:
        nx, ny, nz = self.dims
        if min(self.dims) < 1 or self.n_discs < 0:
            raise ConfigInfeasible("dims must be positive and n_discs non-negative")
        for name in ("semi_axis_x", "semi_axis_y", "semi_axis_z", "gap", "intensity_jitter"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ConfigInfeasible(f"{name} {lo, hi} is not a non-negative interval")
        if self.n_discs == 0:
            return
        if min(self.semi_axis_x[0], self.semi_axis_y[0], self.semi_axis_z[0]) <= 0:
            raise ConfigInfeasible("disc semi-axes must be positive")
        stack = self.n_discs * 2 * self.semi_axis_y[1] + (self.n_discs - 1) * self.gap[1]
        if stack > ny - 1:
            raise ConfigInfeasible(f"{self.n_discs} discs need up to {stack:.1f} voxels along y, only {ny} available")
        if 2 * self.semi_axis_x[1] > nx - 1:
            raise ConfigInfeasible(f"disc width up to {2 * self.semi_axis_x[1]} exceeds x extent {nx}")
        if self.semi_axis_z[0] > nz:
            raise ConfigInfeasible("discs would not intersect any axial slice")


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]


def sample_discs(cfg: PhantomConfig, rng: np.random.Generator) -> list[Disc]:
    nx, ny, nz = cfg.dims
    if cfg.n_discs == 0:
        return []
    ax = rng.uniform(*cfg.semi_axis_x, size=cfg.n_discs)
    ay = rng.uniform(*cfg.semi_axis_y, size=cfg.n_discs)
    az = rng.uniform(*cfg.semi_axis_z, size=cfg.n_discs)
    gaps = rng.uniform(*cfg.gap, size=max(cfg.n_discs - 1, 0))
    extent = 2 * ay.sum() + gaps.sum()
    y = rng.uniform(0.0, (ny - 1) - extent)  # bottom edge of the stack
    column_x = rng.uniform(cfg.semi_axis_x[1], (nx - 1) - cfg.semi_axis_x[1])
    discs = []
    for k in range(cfg.n_discs):
        cy = y + ay[k]
        # lateral drift so the column is not perfectly straight
        cx = float(np.clip(column_x + rng.uniform(-3.0, 3.0), ax[k], (nx - 1) - ax[k]))
        cz = rng.uniform(0.0, nz - 1)
        discs.append(Disc((cx, cy, cz), (ax[k], ay[k], az[k])))
        y = cy + ay[k] + (gaps[k] if k < len(gaps) else 0.0)
    return discs


def disc_mask(dims: tuple[int, int, int], discs: list[Disc]) -> np.ndarray:
    x, y, z = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij")
    mask = np.zeros(dims, dtype=bool)
    for disc in discs:
        (cx, cy, cz), (a, b, c) = disc.center, disc.semi_axes
        mask |= ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2 <= 1.0
    return mask


def generate_phantom(cfg: PhantomConfig, volume_index: int) -> tuple[Volume3D, MaskVolume]:
    """Image and exact mask for phantom ``volume_index``; a pure function of its arguments."""
    cfg.check()
    rng = np.random.default_rng([cfg.seed, volume_index])
    discs = sample_discs(cfg, rng)
    mask = disc_mask(cfg.dims, discs)
    # a global gain would be undone by intensity matching, so jitter the contrast instead
    contrast = rng.uniform(*cfg.intensity_jitter) * (cfg.foreground - cfg.background)
    image = np.where(mask, cfg.background + contrast, cfg.background)
    image = image + rng.normal(0.0, cfg.noise_sigma, size=cfg.dims)
    if image.max() == image.min():
        image = np.zeros(cfg.dims)
    else:
        image = intensity_match(Volume3D(image)).data
    return Volume3D(image), MaskVolume(mask.astype(np.uint8))
