"""Zero-bit frequency-domain codec.

Works on the centered per-channel 2D spectrum of a latent (unnormalized
forward transform, 1/(w*h) inverse, zero-frequency bin shifted to
(w//2, h//2)). The watermark is a ring pattern: the spectrum of a keyed
sign-forced noise map, averaged per channel over classes of equal squared
radius r2(i, j) = floor(i - w/2)^2 + floor(j - h/2)^2, injected into the
bins inside a circular mask r2 < ring_radius^2 and scored by the masked
squared distance to the pattern.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .latents import check_latent_shape, sample_gaussian
from .spatial import inject_spatial

IMAG_RESIDUE_WARN = 1e-3


@dataclass(frozen=True)
class FreqPattern:
    pattern: np.ndarray  # complex128 (c, w, h), constant on each radius class
    mask: np.ndarray  # bool (c, w, h)
    ring_radius: int
    freq_seed: int

    @property
    def shape(self):
        return self.pattern.shape


def dft2_centered(z: np.ndarray) -> np.ndarray:
    """Per-channel 2D DFT with the zero-frequency bin moved to the center."""
    spec = np.fft.fft2(np.asarray(z, dtype=np.float64), axes=(-2, -1))
    return np.fft.fftshift(spec, axes=(-2, -1))


def idft2_centered(spec: np.ndarray) -> np.ndarray:
    """Inverse of dft2_centered; returns the real part as float32.

    Spectral edits can break conjugate symmetry; a residue warning fires
    when the discarded imaginary part is no longer numerical noise.
    """
    back = np.fft.ifft2(np.fft.ifftshift(spec, axes=(-2, -1)), axes=(-2, -1))
    residue = float(np.max(np.abs(back.imag))) if back.size else 0.0
    if residue > IMAG_RESIDUE_WARN:
        warnings.warn(
            f"discarded imaginary residue {residue:.2e} exceeds {IMAG_RESIDUE_WARN:.0e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return np.ascontiguousarray(back.real, dtype=np.float32)


def radius_classes(w: int, h: int) -> np.ndarray:
    """Integer squared radius about the spectrum center, exact for odd sizes."""
    di = np.arange(w, dtype=np.int64) - (w + 1) // 2
    dj = np.arange(h, dtype=np.int64) - (h + 1) // 2
    return di[:, None] ** 2 + dj[None, :] ** 2


def circular_mask(shape, ring_radius: int) -> np.ndarray:
    c, w, h = check_latent_shape(shape)
    inside = radius_classes(w, h) < ring_radius**2
    return np.broadcast_to(inside, (c, w, h)).copy()


def build_ring_pattern(shape, s: np.ndarray, freq_seed: int, ring_radius: int) -> FreqPattern:
    """Derive the keyed ring pattern from a signal map.

    A fresh standard-normal draw (from freq_seed) gets its signs forced to
    `s`; its centered spectrum is then averaged per channel within each
    equal-r2 class, which makes the pattern exactly constant on rings.
    """
    shape = check_latent_shape(shape)
    if np.shape(s) != shape:
        raise ValueError(f"signal map shape {np.shape(s)} != {shape}")
    c, w, h = shape
    eps = sample_gaussian(shape, freq_seed)
    spec = dft2_centered(inject_spatial(eps, s))
    labels = radius_classes(w, h)
    flat_labels = labels.ravel()
    counts = np.bincount(flat_labels)
    pattern = np.empty(shape, dtype=np.complex128)
    for ch in range(c):
        re = np.bincount(flat_labels, weights=spec[ch].real.ravel())
        im = np.bincount(flat_labels, weights=spec[ch].imag.ravel())
        means = (re + 1j * im) / np.maximum(counts, 1)
        pattern[ch] = means[labels]
    mask = np.broadcast_to(labels < ring_radius**2, shape).copy()
    return FreqPattern(pattern=pattern, mask=mask, ring_radius=int(ring_radius), freq_seed=int(freq_seed))


def inject_freq(z_s: np.ndarray, fp: FreqPattern) -> np.ndarray:
    """Replace the masked bins of the latent's spectrum with the ring pattern."""
    z_s = np.asarray(z_s)
    if z_s.shape != fp.shape:
        raise ValueError(f"shape mismatch {z_s.shape} vs {fp.shape}")
    spec = dft2_centered(z_s)
    merged = np.where(fp.mask, fp.pattern, spec)
    return idft2_centered(merged)


def score_freq(z: np.ndarray, fp: FreqPattern) -> float:
    """Frequency detection score: negated masked squared spectral distance."""
    z = np.asarray(z)
    if z.shape != fp.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {fp.shape}")
    diff = (dft2_centered(z) - fp.pattern)[fp.mask]
    return float(-np.sum(diff.real**2 + diff.imag**2))


def inject_freq_batch(zs: np.ndarray, fp: FreqPattern) -> np.ndarray:
    """inject_freq over a (n, c, w, h) batch."""
    if zs.shape[1:] != fp.shape:
        raise ValueError(f"shape mismatch {zs.shape[1:]} vs {fp.shape}")
    spec = dft2_centered(zs)
    merged = np.where(fp.mask[None], fp.pattern[None], spec)
    return idft2_centered(merged)


def score_freq_batch(zs: np.ndarray, fp: FreqPattern) -> np.ndarray:
    """score_freq over a (n, c, w, h) batch."""
    if zs.shape[1:] != fp.shape:
        raise ValueError(f"shape mismatch {zs.shape[1:]} vs {fp.shape}")
    spec = dft2_centered(zs)
    diff = (spec - fp.pattern[None]) * fp.mask[None]
    return -np.sum(diff.real**2 + diff.imag**2, axis=(1, 2, 3))
