"""In-plane resampling and linear intensity matching."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import DegenerateIntensityRange, DegenerateVolume
from .volume_io import Volume3D


def _linear_weights(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation matrix (n_out, n_in) mapping end samples onto end samples."""
    weights = np.zeros((n_out, n_in))
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    rows = np.arange(n_out)
    np.add.at(weights, (rows, lo), 1.0 - frac)
    np.add.at(weights, (rows, hi), frac)
    return weights


def resample_axial(vol: Volume3D, target: tuple[int, int] = (256, 256)) -> Volume3D:
    """Bilinearly resample every axial slice to ``target`` (tx, ty) voxels.

    The first and last samples of each axis map onto each other, so corner
    values are kept and a same-size resample is the identity.
    """
    nx, ny, nz = vol.dims
    tx, ty = (int(t) for t in target)
    if nx < 2 or ny < 2:
        raise DegenerateVolume(f"in-plane dims {nx}x{ny} are too small to interpolate")
    if tx < 2 or ty < 2:
        raise ValueError(f"target {tx}x{ty} must be at least 2x2")
    if (tx, ty) == (nx, ny):
        return Volume3D(vol.data.copy(), vol.spacing)
    wx = _linear_weights(nx, tx)
    wy = _linear_weights(ny, ty)
    out = np.einsum("ax,xyz,by->abz", wx, vol.data.astype(np.float64), wy)
    # keep within the per-slice range despite rounding in the weighted sums
    lo = vol.data.min(axis=(0, 1))
    hi = vol.data.max(axis=(0, 1))
    out = np.clip(out, lo, hi)
    sx, sy, sz = vol.spacing
    return Volume3D(out.astype(np.float32), (sx * nx / tx, sy * ny / ty, sz))


def intensity_match(vol: Volume3D, clip_percentiles: Optional[tuple[float, float]] = None) -> Volume3D:
    """Map intensities linearly so the volume spans exactly [0, 1].

    With ``clip_percentiles=(lo, hi)`` the map is anchored on those
    percentiles instead of the extremes and the result is clipped.
    """
    data = vol.data.astype(np.float64)
    if clip_percentiles is None:
        lo, hi = data.min(), data.max()
    else:
        lo, hi = np.percentile(data, clip_percentiles)
        data = np.clip(data, lo, hi)
    if not hi > lo:
        raise DegenerateIntensityRange(f"intensity range [{lo}, {hi}] is empty")
    out = (data - lo) / (hi - lo)
    return Volume3D(out.astype(np.float32), vol.spacing)
