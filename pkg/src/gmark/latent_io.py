"""Binary latent interchange container.

Layout (little-endian): magic ``GMLT``, version u32, rank u32, dims u32*rank,
payload float32 row-major, CRC32 of the payload bytes. Signal maps travel in
the same container with values exactly 0.0 / 1.0.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import BadMagicError, BadVersionError, PayloadError, TruncatedError

MAGIC = b"GMLT"
VERSION = 1
_MAX_RANK = 16


def write_latent(x: np.ndarray, path) -> None:
    """Serialize a real tensor; raises PayloadError on non-finite values."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise PayloadError("refusing to write non-finite values")
    payload = arr.tobytes()
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(head + payload + struct.pack("<I", zlib.crc32(payload)))


def read_latent(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise TruncatedError("file shorter than magic")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise TruncatedError("header incomplete")
    version, rank = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    if not 1 <= rank <= _MAX_RANK:
        raise PayloadError(f"unreasonable rank {rank}")
    need = 12 + 4 * rank
    if len(blob) < need:
        raise TruncatedError("dims incomplete")
    dims = struct.unpack_from(f"<{rank}I", blob, 12)
    if any(d < 1 for d in dims):
        raise PayloadError(f"zero-sized dimension in {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    end = need + 4 * count
    if len(blob) < end + 4:
        raise TruncatedError(
            f"payload short: declared {count} float32 values plus CRC, "
            f"got {len(blob) - need} bytes"
        )
    if len(blob) > end + 4:
        raise PayloadError("trailing bytes after CRC")
    payload = blob[need:end]
    (crc,) = struct.unpack_from("<I", blob, end)
    if zlib.crc32(payload) != crc:
        raise PayloadError("CRC mismatch")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if not np.all(np.isfinite(arr)):
        raise PayloadError("non-finite values in payload")
    return arr


def write_signal_map(s: np.ndarray, path) -> None:
    write_latent(np.asarray(s, dtype=np.float32), path)


def read_signal_map(path) -> np.ndarray:
    arr = read_latent(path)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise PayloadError("signal map values must be exactly 0.0 or 1.0")
    return arr.astype(np.uint8)
