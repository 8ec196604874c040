"""Latent tensors and signal maps.

A latent is a real (c, w, h) array stored row-major (channel, row, column);
a signal map is its binary sign skeleton: 1 where the latent is positive,
0 elsewhere. Both are plain numpy arrays (float32 for latents, uint8 for
signal maps) and are treated as immutable by every operation here.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SHAPE = (4, 64, 64)


def check_latent_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if len(shape) != 3 or any(d < 1 for d in shape):
        raise ValueError(f"invalid latent shape {shape}: need three dims >= 1")
    return shape


def sample_gaussian(shape, seed: int) -> np.ndarray:
    """Draw an i.i.d. standard-normal latent, deterministic in `seed`."""
    shape = check_latent_shape(shape)
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape, dtype=np.float32)


def sign_map(z: np.ndarray) -> np.ndarray:
    """Binary sign skeleton: 1 for strictly positive entries, 0 otherwise.

    Zero maps to 0 so the operation is total.
    """
    return (np.asarray(z) > 0).astype(np.uint8)


def random_signal_map(shape, rng: np.random.Generator) -> np.ndarray:
    """Fair-coin signal map, the null distribution of unwatermarked signs."""
    return (rng.random(shape) < 0.5).astype(np.uint8)


def is_signal_map(x: np.ndarray) -> bool:
    """Integer dtype marks a signal map; floats are latents."""
    return np.issubdtype(np.asarray(x).dtype, np.integer)
