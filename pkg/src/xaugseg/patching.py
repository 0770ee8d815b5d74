"""Fixed-stride patch tiling of axial slices and overlap-averaged stitching.

Also holds the ``patches.bin`` container used to pass (image, mask) patch
pairs between command-line stages.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import PatchFileError, PatchLargerThanSlice, PatchOutOfBounds, UncoveredPixel
from .volume_io import MaskVolume, Volume3D


@dataclass(frozen=True)
class TilingConfig:
    patch_size: int = 128
    stride: int = 64

    def check(self, dims: Sequence[int]) -> None:
        if not 1 <= self.stride <= self.patch_size:
            raise ValueError(f"stride {self.stride} must lie in [1, {self.patch_size}]")
        if self.patch_size > min(dims):
            raise PatchLargerThanSlice(f"patch {self.patch_size} does not fit slice {tuple(dims)}")


@dataclass
class Patch:
    pixels: np.ndarray
    origin: tuple[int, int]
    slice_index: int = 0
    volume_id: str = ""


def tile_origins(dim: int, patch_size: int, stride: int) -> list[int]:
    """Origins 0, S, 2S, ... plus a final ``dim - P`` if the stride leaves a gap."""
    if patch_size > dim:
        raise PatchLargerThanSlice(f"patch {patch_size} larger than dimension {dim}")
    origins = list(range(0, dim - patch_size + 1, stride))
    if origins[-1] != dim - patch_size:
        origins.append(dim - patch_size)
    return origins


def patch_count(dims: Sequence[int], cfg: TilingConfig) -> int:
    nx, ny = dims
    return len(tile_origins(nx, cfg.patch_size, cfg.stride)) * len(tile_origins(ny, cfg.patch_size, cfg.stride))


def extract_patches(image: np.ndarray, cfg: TilingConfig, slice_index: int = 0, volume_id: str = "") -> list[Patch]:
    image = np.asarray(image)
    cfg.check(image.shape)
    p = cfg.patch_size
    return [
        Patch(image[x0 : x0 + p, y0 : y0 + p].copy(), (x0, y0), slice_index, volume_id)
        for x0 in tile_origins(image.shape[0], p, cfg.stride)
        for y0 in tile_origins(image.shape[1], p, cfg.stride)
    ]


def stitch(patches: Iterable[Patch], dims: tuple[int, int]) -> np.ndarray:
    """Average overlapping patch values back into an ``dims`` slice."""
    total = np.zeros(dims, dtype=np.float64)
    count = np.zeros(dims, dtype=np.int64)
    # fixed accumulation order keeps the result independent of input order
    for patch in sorted(patches, key=lambda p: (p.origin, p.pixels.tobytes())):
        px, py = patch.pixels.shape
        x0, y0 = patch.origin
        if x0 < 0 or y0 < 0 or x0 + px > dims[0] or y0 + py > dims[1]:
            raise PatchOutOfBounds(f"patch at {patch.origin} of size {px}x{py} exceeds {dims}")
        total[x0 : x0 + px, y0 : y0 + py] += patch.pixels
        count[x0 : x0 + px, y0 : y0 + py] += 1
    if (count == 0).any():
        hole = tuple(int(i) for i in np.argwhere(count == 0)[0])
        raise UncoveredPixel(f"pixel {hole} is not covered by any patch")
    return total / count


def extract_pairs(image: Volume3D, mask: MaskVolume, cfg: TilingConfig, volume_id: str = "") -> list[tuple[Patch, Patch]]:
    """All (image, mask) patch pairs from every axial slice of a volume."""
    if image.dims != mask.dims:
        raise ValueError(f"image dims {image.dims} differ from mask dims {mask.dims}")
    pairs = []
    for z in range(image.dims[2]):
        imgs = extract_patches(image.data[:, :, z], cfg, z, volume_id)
        masks = extract_patches(mask.data[:, :, z], cfg, z, volume_id)
        pairs.extend(zip(imgs, masks))
    return pairs


# patches.bin: magic, version, count, P; then per pair
#   int32 slice_index, int32 x0, int32 y0, float32[P*P] image, uint8[P*P] mask
# all little-endian, pixels row-major over (x, y).
PATCH_MAGIC = b"XPAT"
PATCH_VERSION = 1
_HEAD = struct.Struct("<4sHII")
_PROV = struct.Struct("<iii")


@dataclass
class PatchSet:
    """Stacked patch pairs: ``images`` (n, P, P) float32, ``masks`` (n, P, P) uint8."""

    images: np.ndarray
    masks: np.ndarray
    provenance: np.ndarray  # (n, 3) int32: slice_index, x0, y0

    def __len__(self):
        return len(self.images)

    @property
    def patch_size(self) -> int:
        return self.images.shape[1]

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[Patch, Patch]]) -> "PatchSet":
        if not pairs:
            raise ValueError("cannot build a patch set from zero pairs")
        images = np.stack([img.pixels for img, _ in pairs]).astype(np.float32)
        masks = np.stack([msk.pixels for _, msk in pairs]).astype(np.uint8)
        prov = np.array([(img.slice_index, *img.origin) for img, _ in pairs], dtype=np.int32).reshape(-1, 3)
        return cls(images, masks, prov)

    def to_bytes(self) -> bytes:
        n, p = len(self), self.patch_size
        chunks = [_HEAD.pack(PATCH_MAGIC, PATCH_VERSION, n, p)]
        for i in range(n):
            chunks.append(_PROV.pack(*(int(v) for v in self.provenance[i])))
            chunks.append(self.images[i].astype("<f4").tobytes())
            chunks.append(self.masks[i].astype("u1").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PatchSet":
        if len(raw) < _HEAD.size:
            raise PatchFileError("patch file shorter than its header")
        magic, version, n, p = _HEAD.unpack_from(raw, 0)
        if magic != PATCH_MAGIC:
            raise PatchFileError(f"bad patch file magic {magic!r}")
        if version != PATCH_VERSION:
            raise PatchFileError(f"unsupported patch file version {version}")
        rec = _PROV.size + 5 * p * p
        if len(raw) != _HEAD.size + n * rec:
            raise PatchFileError(f"patch file size {len(raw)} does not match {n} pairs of {p}x{p}")
        body = np.frombuffer(raw, dtype=np.uint8, offset=_HEAD.size).reshape(n, rec)
        prov = body[:, : _PROV.size].copy().view("<i4").astype(np.int32)
        images = body[:, _PROV.size : _PROV.size + 4 * p * p].copy().view("<f4").reshape(n, p, p).astype(np.float32)
        masks = body[:, _PROV.size + 4 * p * p :].reshape(n, p, p).copy()
        return cls(images, masks, prov)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PatchSet":
        return cls.from_bytes(Path(path).read_bytes())
