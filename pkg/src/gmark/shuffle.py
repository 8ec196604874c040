"""Keyed position shuffling driven by a ChaCha20 keystream.

The cipher keystream (RFC 8439 layout: 32-byte key, 96-bit nonce, 32-bit
block counter starting at 0) feeds a Fisher-Yates walk over the flattened
positions. Uniform draws come from consecutive little-endian 64-bit chunks
with rejection sampling, so the permutation is unbiased and reproducible
from the key alone. Permutations are cached per (key, nonce, n); cached
tables are read-only and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

KEY_BYTES = 32
NONCE_BYTES = 12
_CHUNK = 1 << 16


@dataclass(frozen=True)
class ShuffleKey:
    cipher_key: bytes
    nonce: bytes

    def __post_init__(self):
        if len(self.cipher_key) != KEY_BYTES:
            raise ValueError(f"cipher key must be {KEY_BYTES} bytes")
        if len(self.nonce) != NONCE_BYTES:
            raise ValueError(f"nonce must be {NONCE_BYTES} bytes")


def keystream(key: bytes, nonce: bytes, nbytes: int) -> bytes:
    """First `nbytes` of the ChaCha20 keystream for (key, nonce, counter=0)."""
    enc = Cipher(algorithms.ChaCha20(key, bytes(4) + nonce), mode=None).encryptor()
    return enc.update(bytes(nbytes))


def _u64_stream(key: bytes, nonce: bytes):
    enc = Cipher(algorithms.ChaCha20(key, bytes(4) + nonce), mode=None).encryptor()
    while True:
        block = enc.update(bytes(_CHUNK))
        yield from np.frombuffer(block, dtype="<u8")


@lru_cache(maxsize=64)
def _permutation_tables(cipher_key: bytes, nonce: bytes, n: int):
    draws = _u64_stream(cipher_key, nonce)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        m = i + 1
        limit = (1 << 64) - ((1 << 64) % m)
        v = int(next(draws))
        while v >= limit:
            v = int(next(draws))
        j = v % m
        perm[i], perm[j] = perm[j], perm[i]
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.argsort(perm)
    perm.setflags(write=False)
    inv.setflags(write=False)
    return perm, inv


def permutation(key: ShuffleKey, n: int) -> np.ndarray:
    """Forward permutation table: output k takes input element perm[k]."""
    return _permutation_tables(key.cipher_key, key.nonce, n)[0]


def shuffle(s: np.ndarray, key: ShuffleKey) -> np.ndarray:
    perm, _ = _permutation_tables(key.cipher_key, key.nonce, s.size)
    return s.reshape(-1)[perm].reshape(s.shape)


def unshuffle(s: np.ndarray, key: ShuffleKey) -> np.ndarray:
    _, inv = _permutation_tables(key.cipher_key, key.nonce, s.size)
    return s.reshape(-1)[inv].reshape(s.shape)


def unshuffle_rows(flat_rows: np.ndarray, key: ShuffleKey) -> np.ndarray:
    """Unshuffle a batch of flattened maps, one per row."""
    _, inv = _permutation_tables(key.cipher_key, key.nonce, flat_rows.shape[1])
    return flat_rows[:, inv]
