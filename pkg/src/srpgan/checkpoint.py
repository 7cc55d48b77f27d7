"""Binary named-tensor archive for model and optimizer state.

Layout (all integers little-endian)::

    b"SRPG" | u32 version | u32 count | count x tensor | u32 crc32

    tensor := u32 name_len | name (UTF-8) | u32 rank | rank x u64 dims | float32 data

The CRC covers every byte between the magic and the CRC itself.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Dict

import numpy as np

MAGIC = b"SRPG"
VERSION = 1


class CheckpointError(Exception):
    pass


def dumps(tensors: Dict[str, np.ndarray]) -> bytes:
    body = [struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        body.append(struct.pack("<I", len(raw)))
        body.append(raw)
        body.append(struct.pack("<I", arr.ndim))
        body.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body.append(arr.tobytes())
    body = b"".join(body)
    return MAGIC + body + struct.pack("<I", zlib.crc32(body))


def loads(blob: bytes) -> Dict[str, np.ndarray]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not an SRPG checkpoint (bad magic)")
    body, (crc,) = blob[4:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch: file is corrupt")
    version, count = struct.unpack_from("<II", body, 0)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", body, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", body, pos)
        pos += 8 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        out[name] = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
    if pos != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    return out


def save(path, tensors: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(tensors))
    tmp.replace(path)


def load(path) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
