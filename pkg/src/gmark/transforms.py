"""Latent-level geometric transforms and their parameter inverses.

All transforms use nearest-neighbor resampling so binary signal maps stay
binary. Cells with no source pixel are refilled with fresh unwatermarked
noise: fair-coin bits for signal maps, standard-normal draws for latents.
Rotation pulls destination pixels from the source grid about the continuous
center (w/2, h/2), with pixel centers at (i + 1/2, j + 1/2).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .latents import is_signal_map

KINDS = ("rotate", "crop_rescale", "sign_flip", "identity", "compose")


@dataclass(frozen=True)
class TransformSpec:
    """One latent-space edit, deterministic once `rng_seed` is fixed."""

    kind: str
    angle: float = 0.0
    area_ratio: float = 1.0
    p: float = 0.0
    parts: tuple["TransformSpec", ...] = ()
    rng_seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unsupported transform kind {self.kind!r}")
        if self.kind == "rotate" and not -180.0 <= self.angle <= 180.0:
            raise ValueError("rotation angle must lie in [-180, 180] degrees")
        if self.kind == "crop_rescale" and not 0.0 < self.area_ratio <= 1.0:
            raise ValueError("crop area ratio must lie in (0, 1]")
        if self.kind == "sign_flip" and not 0.0 <= self.p <= 1.0:
            raise ValueError("flip probability must lie in [0, 1]")

    @classmethod
    def rotate(cls, angle: float, rng_seed: int | None = None):
        return cls("rotate", angle=float(angle), rng_seed=rng_seed)

    @classmethod
    def crop_rescale(cls, area_ratio: float, rng_seed: int | None = None):
        return cls("crop_rescale", area_ratio=float(area_ratio), rng_seed=rng_seed)

    @classmethod
    def sign_flip(cls, p: float, rng_seed: int | None = None):
        return cls("sign_flip", p=float(p), rng_seed=rng_seed)

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def compose(cls, parts):
        return cls("compose", parts=tuple(parts))

    def seeded(self, rng: np.random.Generator) -> "TransformSpec":
        """Copy of this spec with fresh concrete seeds drawn from `rng`."""
        if self.kind == "compose":
            return replace(self, parts=tuple(p.seeded(rng) for p in self.parts))
        if self.kind == "identity":
            return self
        return replace(self, rng_seed=int(rng.integers(0, 2**63)))


def _fill(shape, rng: np.random.Generator, signal: bool):
    if signal:
        return (rng.random(shape) < 0.5).astype(np.uint8)
    return rng.standard_normal(shape).astype(np.float32)


def _rotation_source(w: int, h: int, angle: float):
    """Pull map for rotation: per destination cell, source indices + validity."""
    ii, jj = np.meshgrid(np.arange(w), np.arange(h), indexing="ij")
    x = ii + 0.5 - w / 2.0
    y = jj + 0.5 - h / 2.0
    th = np.deg2rad(angle)
    c, s = np.cos(-th), np.sin(-th)
    sx = c * x - s * y + w / 2.0
    sy = s * x + c * y + h / 2.0
    si = np.floor(sx).astype(np.int64)
    sj = np.floor(sy).astype(np.int64)
    valid = (si >= 0) & (si < w) & (sj >= 0) & (sj < h)
    return si, sj, valid


def _rotate(x: np.ndarray, angle: float, rng: np.random.Generator) -> np.ndarray:
    c, w, h = x.shape
    k = round(angle / 90.0)
    if angle == k * 90.0 and (w == h or k % 2 == 0):
        # exact grid permutation, no resampling and no fill
        return np.ascontiguousarray(np.rot90(x, k=k % 4, axes=(1, 2)))
    si, sj, valid = _rotation_source(w, h, angle)
    out = _fill(x.shape, rng, is_signal_map(x))
    out[:, valid] = x[:, si[valid], sj[valid]]
    return out


def _nearest_axis(n_out: int, n_in: int) -> np.ndarray:
    """Nearest source index per output cell for a 1-D rescale n_in -> n_out."""
    idx = ((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def _crop_window(w: int, h: int, area_ratio: float, rng: np.random.Generator):
    side = np.sqrt(area_ratio)
    ww = max(1, round(w * side))
    wh = max(1, round(h * side))
    x0 = int(rng.integers(0, w - ww + 1))
    y0 = int(rng.integers(0, h - wh + 1))
    return ww, wh, x0, y0


def _crop_rescale(x: np.ndarray, area_ratio: float, rng: np.random.Generator):
    c, w, h = x.shape
    ww, wh, x0, y0 = _crop_window(w, h, area_ratio, rng)
    si = x0 + _nearest_axis(w, ww)
    sj = y0 + _nearest_axis(h, wh)
    return np.ascontiguousarray(x[:, si[:, None], sj[None, :]])


def _sign_flip(x: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    mask = rng.random(x.shape) < p
    if is_signal_map(x):
        return np.where(mask, x ^ 1, x).astype(x.dtype)
    return np.where(mask, -x, x).astype(x.dtype)


def apply_transform(x: np.ndarray, t: TransformSpec) -> np.ndarray:
    """Apply `t` to a latent or signal map, returning a new array."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError("expected a (c, w, h) array")
    if t.kind == "identity":
        return x.copy()
    if t.kind == "compose":
        out = x
        for part in t.parts:
            out = apply_transform(out, part)
        return out
    rng = np.random.default_rng(t.rng_seed)
    if t.kind == "rotate":
        return _rotate(x, t.angle, rng)
    if t.kind == "crop_rescale":
        return _crop_rescale(x, t.area_ratio, rng)
    if t.kind == "sign_flip":
        return _sign_flip(x, t.p, rng)
    raise ValueError(f"unsupported transform kind {t.kind!r}")


def inverse_transform_estimate(x: np.ndarray, t: TransformSpec) -> np.ndarray:
    """Best-effort parameter inverse of `t` (rotation and crop only).

    Rotation is undone by rotating back; a crop is undone by shrinking the
    rescaled map into the original window position and refilling the
    surroundings. Content rotated or cropped out of frame stays lost, so
    this is an estimate, not an exact inverse.
    """
    x = np.asarray(x)
    if t.kind == "identity":
        return x.copy()
    if t.kind == "compose":
        out = x
        for part in reversed(t.parts):
            out = inverse_transform_estimate(out, part)
        return out
    if t.kind == "rotate":
        rng = np.random.default_rng(t.rng_seed)
        return _rotate(x, -t.angle, rng)
    if t.kind == "crop_rescale":
        rng = np.random.default_rng(t.rng_seed)
        c, w, h = x.shape
        ww, wh, x0, y0 = _crop_window(w, h, t.area_ratio, rng)
        si = _nearest_axis(ww, w)
        sj = _nearest_axis(wh, h)
        out = _fill(x.shape, rng, is_signal_map(x))
        out[:, x0 : x0 + ww, y0 : y0 + wh] = x[:, si[:, None], sj[None, :]]
        return out
    raise ValueError(f"transform kind {t.kind!r} has no parameter inverse")
