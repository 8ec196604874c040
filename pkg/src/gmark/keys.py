"""Watermark key material and its JSON key-file format.

A key bundles everything secret: the message bits, the shuffle cipher key
and nonce, the ring seed and radius, and the target latent shape. The ring
pattern is never serialized; detection rebuilds it deterministically from
the key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import BadVersionError, CapacityError, FormatError
from .shuffle import KEY_BYTES, NONCE_BYTES, ShuffleKey
from .spatial import UpsampleLayout, make_layout

KEYFILE_VERSION = 1


def pack_bits(bits: np.ndarray) -> str:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def unpack_bits(hexstr: str, l: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8)
    bits = np.unpackbits(raw)[:l].copy()
    if bits.size != l:
        raise FormatError(f"bit string too short for {l} bits")
    return bits


@dataclass(frozen=True)
class WatermarkKey:
    bits: np.ndarray  # uint8 (l,)
    cipher: ShuffleKey
    latent_shape: tuple[int, int, int]
    ring_radius: int = 4
    freq_seed: int = 0

    def __post_init__(self):
        n = int(np.prod(self.latent_shape))
        if not 1 <= self.bits.size <= n:
            raise CapacityError(f"cannot fit {self.bits.size} bits into {n} positions")

    @property
    def l(self) -> int:
        return int(self.bits.size)

    def layout(self) -> UpsampleLayout:
        return make_layout(self.l, self.latent_shape)

    def with_bits(self, bits: np.ndarray) -> "WatermarkKey":
        return replace(self, bits=np.asarray(bits, dtype=np.uint8))


def generate_key(
    l: int = 256,
    latent_shape=(4, 64, 64),
    ring_radius: int = 4,
    seed: int | None = None,
) -> WatermarkKey:
    """Fresh key material, deterministic when `seed` is given."""
    rng = np.random.default_rng(seed)
    shape = tuple(int(d) for d in latent_shape)
    if not 1 <= l <= int(np.prod(shape)):
        raise CapacityError(f"cannot fit {l} bits into {int(np.prod(shape))} positions")
    bits = rng.integers(0, 2, size=l, dtype=np.uint8)
    cipher = ShuffleKey(rng.bytes(KEY_BYTES), rng.bytes(NONCE_BYTES))
    freq_seed = int(rng.integers(0, 2**31))
    return WatermarkKey(
        bits=bits,
        cipher=cipher,
        latent_shape=shape,
        ring_radius=int(ring_radius),
        freq_seed=freq_seed,
    )


def save_key(key: WatermarkKey, path) -> None:
    doc = {
        "version": KEYFILE_VERSION,
        "l": key.l,
        "latent_shape": list(key.latent_shape),
        "cipher_key_hex": key.cipher.cipher_key.hex(),
        "nonce_hex": key.cipher.nonce.hex(),
        "watermark_bits_hex": pack_bits(key.bits),
        "ring_radius": key.ring_radius,
        "freq_seed": key.freq_seed,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_key(path) -> WatermarkKey:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"key file is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise FormatError("key file must hold a JSON object")
    if doc.get("version") != KEYFILE_VERSION:
        raise BadVersionError(f"unsupported key file version {doc.get('version')}")
    try:
        shape = tuple(int(d) for d in doc["latent_shape"])
        key = WatermarkKey(
            bits=unpack_bits(doc["watermark_bits_hex"], int(doc["l"])),
            cipher=ShuffleKey(
                bytes.fromhex(doc["cipher_key_hex"]),
                bytes.fromhex(doc["nonce_hex"]),
            ),
            latent_shape=shape,
            ring_radius=int(doc["ring_radius"]),
            freq_seed=int(doc["freq_seed"]),
        )
    except (KeyError, ValueError, TypeError) as e:
        if isinstance(e, CapacityError):
            raise
        raise FormatError(f"malformed key file: {e}") from e
    return key


def xor_bits(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    return a ^ b
