"""Minimal single-file NIfTI-1 (``.nii``) reader and writer.

Only the subset needed for scans and masks is handled: uncompressed
single-file layout, datatypes uint8 / int16 / float32, either byte order.
Orientation fields (qform/sform) are ignored on read and zeroed on write.

Volumes are held as numpy arrays indexed ``[x, y, z]``; on disk the samples
are stored x-fastest, which is Fortran order for that indexing.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import BadHeader, BadMagic, DimensionMismatch, TruncatedData, UnsupportedDatatype

HEADER_SIZE = 348
DATA_OFFSET = 352
MAGIC = b"n+1\x00"

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16

# datatype code -> (numpy type char, bitpix)
_DATATYPES = {
    DT_UINT8: ("u1", 8),
    DT_INT16: ("i2", 16),
    DT_FLOAT32: ("f4", 32),
}

# (struct format, byte offset) for the header fields we read or write
_FIELDS = {
    "sizeof_hdr": ("i", 0),
    "dim": ("8h", 40),
    "datatype": ("h", 70),
    "bitpix": ("h", 72),
    "pixdim": ("8f", 76),
    "vox_offset": ("f", 108),
    "scl_slope": ("f", 112),
    "scl_inter": ("f", 116),
    "xyzt_units": ("B", 123),
    "magic": ("4s", 344),
}


@dataclass
class NiftiHeader:
    sizeof_hdr: int = HEADER_SIZE
    dim: tuple = (3, 1, 1, 1, 1, 1, 1, 1)
    datatype: int = DT_FLOAT32
    bitpix: int = 32
    pixdim: tuple = (1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    vox_offset: float = float(DATA_OFFSET)
    scl_slope: float = 0.0
    scl_inter: float = 0.0
    magic: bytes = MAGIC
    endian: str = "<"

    @property
    def shape(self) -> tuple[int, int, int]:
        nx, ny, nz = (max(int(d), 1) for d in self.dim[1:4])
        rank = int(self.dim[0])
        # trailing unused dims are 1 by convention, but do not trust them
        if rank < 3:
            nz = 1
        if rank < 2:
            ny = 1
        return nx, ny, nz

    def pack(self) -> bytes:
        buf = bytearray(DATA_OFFSET)
        values = {
            "sizeof_hdr": (self.sizeof_hdr,),
            "dim": tuple(int(d) for d in self.dim),
            "datatype": (self.datatype,),
            "bitpix": (self.bitpix,),
            "pixdim": tuple(float(p) for p in self.pixdim),
            "vox_offset": (self.vox_offset,),
            "scl_slope": (self.scl_slope,),
            "scl_inter": (self.scl_inter,),
            "xyzt_units": (2,),  # NIFTI_UNITS_MM
            "magic": (self.magic,),
        }
        for name, (fmt, off) in _FIELDS.items():
            struct.pack_into(self.endian + fmt, buf, off, *values[name])
        return bytes(buf)

    @classmethod
    def unpack(cls, raw: bytes) -> "NiftiHeader":
        if len(raw) < DATA_OFFSET:
            raise TruncatedData(f"stream holds {len(raw)} bytes, need at least {DATA_OFFSET}")
        endian = None
        for candidate in ("<", ">"):
            if struct.unpack_from(candidate + "i", raw, 0)[0] == HEADER_SIZE:
                endian = candidate
                break
        if endian is None:
            raise BadHeader("sizeof_hdr is not 348 in either byte order")

        def get(name):
            fmt, off = _FIELDS[name]
            out = struct.unpack_from(endian + fmt, raw, off)
            return out if len(out) > 1 else out[0]

        return cls(
            sizeof_hdr=get("sizeof_hdr"),
            dim=get("dim"),
            datatype=get("datatype"),
            bitpix=get("bitpix"),
            pixdim=get("pixdim"),
            vox_offset=get("vox_offset"),
            scl_slope=get("scl_slope"),
            scl_inter=get("scl_inter"),
            magic=get("magic"),
            endian=endian,
        )

    def validate(self) -> None:
        if self.magic != MAGIC:
            raise BadMagic(f"magic {self.magic!r} is not a single-file NIfTI-1 magic")
        if self.datatype not in _DATATYPES:
            raise UnsupportedDatatype(f"datatype code {self.datatype} is not supported")
        if self.bitpix != _DATATYPES[self.datatype][1]:
            raise BadHeader(f"bitpix {self.bitpix} inconsistent with datatype {self.datatype}")
        if not np.isfinite(self.vox_offset) or self.vox_offset < DATA_OFFSET:
            raise BadHeader(f"vox_offset {self.vox_offset} is below {DATA_OFFSET}")
        rank = self.dim[0]
        if not 1 <= rank <= 7:
            raise BadHeader(f"dim[0]={rank} is not a valid rank")
        if any(d < 1 for d in self.dim[1 : rank + 1]):
            raise BadHeader(f"non-positive dimension in {self.dim}")
        if rank > 3 and any(d != 1 for d in self.dim[4 : rank + 1]):
            raise BadHeader("only 3D volumes are supported")


def _spacing(values) -> tuple[float, float, float]:
    # pixdim is float32 on disk; snap so spacing survives a round trip
    return tuple(float(np.float32(v)) for v in values)


@dataclass(eq=False)
class Volume3D:
    """Scalar volume indexed ``data[x, y, z]`` with voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise DimensionMismatch(f"expected a non-empty 3D array, got shape {data.shape}")
        self.data = data
        self.spacing = _spacing(self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Volume3D) or type(other) is not type(self):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(eq=False)
class MaskVolume(Volume3D):
    """Binary {0, 1} volume; geometry matches the image it annotates."""

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise DimensionMismatch(f"expected a non-empty 3D array, got shape {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1; use binarize() for soft masks")
        self.data = data.astype(np.uint8)
        self.spacing = _spacing(self.spacing)

    @classmethod
    def binarize(cls, vol: Volume3D, threshold: float = 0.5) -> "MaskVolume":
        return cls((vol.data >= threshold).astype(np.uint8), vol.spacing)


def _decode(raw: bytes) -> tuple[NiftiHeader, np.ndarray]:
    hdr = NiftiHeader.unpack(raw)
    hdr.validate()
    nx, ny, nz = hdr.shape
    code, bitpix = _DATATYPES[hdr.datatype]
    offset = int(hdr.vox_offset)
    nbytes = nx * ny * nz * bitpix // 8
    if len(raw) < offset + nbytes:
        raise TruncatedData(f"need {offset + nbytes} bytes for the voxel payload, stream has {len(raw)}")
    arr = np.frombuffer(raw, dtype=hdr.endian + code, count=nx * ny * nz, offset=offset)
    return hdr, arr.reshape((nx, ny, nz), order="F")


def read_nifti(raw: bytes) -> Volume3D:
    """Parse a single-file NIfTI-1 byte stream.

    Scaling is applied as ``raw * scl_slope + scl_inter`` when the slope is
    non-zero; float32 payloads without scaling come back bit-identical.
    """
    hdr, arr = _decode(bytes(raw))
    if hdr.scl_slope != 0 and np.isfinite(hdr.scl_slope):
        values = arr.astype(np.float64) * hdr.scl_slope + hdr.scl_inter
    else:
        values = arr
    return Volume3D(values.astype(np.float32), tuple(hdr.pixdim[1:4]))


def read_mask(raw: bytes, threshold: float = 0.5) -> MaskVolume:
    return MaskVolume.binarize(read_nifti(raw), threshold)


def write_nifti(vol: Volume3D) -> bytes:
    """Serialize as little-endian single-file NIfTI-1 with data at byte 352.

    Binary volumes (any ``MaskVolume``, or a ``Volume3D`` holding only 0 and
    1) are written as uint8, everything else as float32.
    """
    data = vol.data
    binary = isinstance(vol, MaskVolume) or bool(np.isin(data, (0, 1)).all())
    if binary:
        datatype, payload = DT_UINT8, data.astype("<u1")
    else:
        datatype, payload = DT_FLOAT32, data.astype("<f4")
    nx, ny, nz = data.shape
    hdr = NiftiHeader(
        dim=(3, nx, ny, nz, 1, 1, 1, 1),
        datatype=datatype,
        bitpix=_DATATYPES[datatype][1],
        pixdim=(1.0, *vol.spacing, 0.0, 0.0, 0.0, 0.0),
    )
    return hdr.pack() + payload.tobytes(order="F")


PathLike = Union[str, Path]


def load_volume(path: PathLike) -> Volume3D:
    return read_nifti(Path(path).read_bytes())


def load_mask(path: PathLike, threshold: float = 0.5) -> MaskVolume:
    return read_mask(Path(path).read_bytes(), threshold)


def save_volume(path: PathLike, vol: Volume3D) -> None:
    Path(path).write_bytes(write_nifti(vol))
