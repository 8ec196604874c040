"""Multi-bit spatial-domain codec.

A length-l bit message is stretched over the n = c*w*h latent positions by a
flat boundary map (bit i owns flat indices [floor(i*n/l), floor((i+1)*n/l))),
shuffled with the keyed permutation, and written into the latent's signs.
Decoding reverses the permutation and lets each bit's positions vote: the
per-bit vote mean is kept as a real number, hard decisions happen downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError
from .latents import sign_map
from .shuffle import ShuffleKey, unshuffle, unshuffle_rows


@dataclass(frozen=True)
class UpsampleLayout:
    """Bit-to-position ownership map for one (l, shape) pair."""

    l: int
    shape: tuple[int, int, int]
    bounds: np.ndarray  # int64, length l + 1, bounds[i]..bounds[i+1] owned by bit i

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.bounds)


def make_layout(l: int, shape) -> UpsampleLayout:
    shape = tuple(int(d) for d in shape)
    n = int(np.prod(shape))
    if not 1 <= l <= n:
        raise CapacityError(f"cannot fit {l} bits into {n} positions")
    bounds = (np.arange(l + 1, dtype=np.int64) * n) // l
    bounds.setflags(write=False)
    return UpsampleLayout(l=int(l), shape=shape, bounds=bounds)


def upsample(bits: np.ndarray, layout: UpsampleLayout) -> np.ndarray:
    """Nearest up-sampling: replicate each bit over the positions it owns."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if bits.size != layout.l:
        raise ValueError(f"expected {layout.l} bits, got {bits.size}")
    return np.repeat(bits, layout.counts).reshape(layout.shape)


def downsample(s: np.ndarray, layout: UpsampleLayout) -> np.ndarray:
    """Average-pool votes back to one real value per bit."""
    flat = np.asarray(s).reshape(-1)
    if flat.size != layout.bounds[-1]:
        raise ValueError(
            f"signal map has {flat.size} elements, layout covers {layout.bounds[-1]}"
        )
    sums = np.add.reduceat(flat.astype(np.float64), layout.bounds[:-1])
    return sums / layout.counts


def inject_spatial(z: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Force the latent's signs to the signal map: |z| * (2s - 1)."""
    z = np.asarray(z)
    if z.shape != np.shape(s):
        raise ValueError(f"shape mismatch {z.shape} vs {np.shape(s)}")
    signs = 2.0 * np.asarray(s, dtype=np.float32) - 1.0
    return (np.abs(z) * signs).astype(z.dtype)


def extract_bits(z: np.ndarray, key: ShuffleKey, layout: UpsampleLayout):
    """Recover per-bit vote means and the raw signal map from a latent."""
    s = sign_map(z) if not np.issubdtype(np.asarray(z).dtype, np.integer) else np.asarray(z)
    votes = downsample(unshuffle(s, key), layout)
    return votes, s


def votes_from_signal_maps(maps: np.ndarray, key: ShuffleKey, layout: UpsampleLayout):
    """Vectorized vote extraction for a (n, c, w, h) batch of signal maps."""
    flat = maps.reshape(maps.shape[0], -1)
    plain = unshuffle_rows(flat, key).astype(np.float64)
    sums = np.add.reduceat(plain, layout.bounds[:-1], axis=1)
    return sums / layout.counts


def score_spatial(votes: np.ndarray, bits: np.ndarray) -> float:
    """Spatial detection score: negated squared error between votes and bits."""
    votes = np.asarray(votes, dtype=np.float64).reshape(-1)
    bits = np.asarray(bits, dtype=np.float64).reshape(-1)
    if votes.size != bits.size:
        raise ValueError(f"length mismatch {votes.size} vs {bits.size}")
    return float(-np.sum((votes - bits) ** 2))
