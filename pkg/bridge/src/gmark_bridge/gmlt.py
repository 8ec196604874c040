"""Reader/writer for the GMLT latent interchange container.

The bridge is a standalone process; it deliberately re-implements the
container from its published layout instead of importing the codec
package: magic ``GMLT``, version u32, rank u32, dims u32*rank, float32
payload row-major, CRC32 of the payload, all little-endian.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"GMLT"
VERSION = 1


class LatentFormatError(ValueError):
    pass


def write_latent(x: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise LatentFormatError("refusing to write non-finite values")
    payload = arr.tobytes()
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(head + payload + struct.pack("<I", zlib.crc32(payload)))


def read_latent(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise LatentFormatError(f"not a GMLT file: magic {blob[:4]!r}")
    if len(blob) < 12:
        raise LatentFormatError("header incomplete")
    version, rank = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise LatentFormatError(f"unsupported version {version}")
    if not 1 <= rank <= 16:
        raise LatentFormatError(f"unreasonable rank {rank}")
    need = 12 + 4 * rank
    if len(blob) < need:
        raise LatentFormatError("dims incomplete")
    dims = struct.unpack_from(f"<{rank}I", blob, 12)
    count = int(np.prod(dims, dtype=np.int64))
    end = need + 4 * count
    if len(blob) != end + 4:
        raise LatentFormatError("payload length disagrees with header")
    payload = blob[need:end]
    (crc,) = struct.unpack_from("<I", blob, end)
    if zlib.crc32(payload) != crc:
        raise LatentFormatError("CRC mismatch")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if not np.all(np.isfinite(arr)):
        raise LatentFormatError("non-finite values in payload")
    return arr
