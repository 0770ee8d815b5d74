"""Model checkpoint container.

Layout (little-endian)::

    8 bytes   magic  b"XAUGCKPT"
    u32       format version (1)
    u32       n = byte length of the JSON config
    n bytes   UTF-8 JSON of NetworkConfig fields
    u32       number of arrays
    per array, in sorted name order:
        u16 name length, name (UTF-8)
        u8  dtype code (1 = float32, 2 = float64)
        u8  ndim, then ndim x u32 shape
        raw C-order data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .network import NetworkConfig, ResidualUNet

CKPT_MAGIC = b"XAUGCKPT"
CKPT_VERSION = 1
_DTYPES = {1: "<f4", 2: "<f8"}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def dump_checkpoint(net: ResidualUNet) -> bytes:
    cfg = json.dumps(net.config.to_dict(), sort_keys=True).encode()
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(cfg)), cfg, struct.pack("<I", len(net.params))]
    for name in sorted(net.params):
        arr = net.params[name]
        raw_name = name.encode()
        out.append(struct.pack("<H", len(raw_name)) + raw_name)
        out.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).astype(_DTYPES[_CODES[arr.dtype]]).tobytes())
    return b"".join(out)


def parse_checkpoint(raw: bytes) -> ResidualUNet:
    try:
        if raw[:8] != CKPT_MAGIC:
            raise CheckpointError("not a model checkpoint (bad magic)")
        version, n = struct.unpack_from("<II", raw, 8)
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 16
        config = NetworkConfig(**json.loads(raw[pos : pos + n].decode()))
        pos += n
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2 : pos + 2 + ln].decode()
            pos += 2 + ln
            code, ndim = struct.unpack_from("<BB", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 2)
            pos += 2 + 4 * ndim
            dtype = np.dtype(_DTYPES[code])
            size = int(np.prod(shape)) * dtype.itemsize
            if pos + size > len(raw):
                raise CheckpointError("checkpoint truncated")
            params[name] = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=pos).reshape(shape).astype(dtype.newbyteorder("="))
            pos += size
        return ResidualUNet(config, params)
    except CheckpointError:
        raise
    except (struct.error, KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def save_checkpoint(path, net: ResidualUNet) -> None:
    Path(path).write_bytes(dump_checkpoint(net))


def load_checkpoint(path) -> ResidualUNet:
    return parse_checkpoint(Path(path).read_bytes())
