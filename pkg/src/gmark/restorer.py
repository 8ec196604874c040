"""Trainable signal-map restorer.

A small encoder-decoder convnet (three stride-2 stages plus a bottleneck,
channel width doubling per stage, nearest-neighbor upsampling and skip
concatenation) maps a transformed watermarked signal map back to the
original map, while passing unwatermarked maps through unchanged. Training
mixes both behaviors per batch: positives pair a transformed watermarked
map with the untransformed one, negatives pair a transformed random map
with itself, and the loss is mean binary cross-entropy on both halves.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    PayloadError,
    TrainingError,
    TruncatedError,
)
from .frequency import FreqPattern, inject_freq_batch
from .latents import sign_map
from .nn import (
    Conv2d,
    bce_grad,
    bce_with_logits,
    make_optimizer,
    elu,
    elu_backward,
    sigmoid,
    upsample2,
    upsample2_backward,
)
from .transforms import TransformSpec, apply_transform

MODEL_MAGIC = b"GMNR"
MODEL_VERSION = 1

_LAYERS = (
    "e1a", "e1b", "d1",
    "e2a", "e2b", "d2",
    "e3a", "e3b", "d3",
    "ba", "bb",
    "u3", "m3a", "m3b",
    "u2", "m2a", "m2b",
    "u1", "m1a", "m1b",
    "head",
)


class RestorerModel:
    """Encoder-decoder over (c, w, h) signal maps; logistic output."""

    def __init__(self, base_features: int = 16, shape=(4, 64, 64), seed: int = 0):
        c, w, h = (int(d) for d in shape)
        if w % 8 or h % 8:
            raise ValueError("spatial dims must be divisible by 8")
        self.base_features = int(base_features)
        self.shape = (c, w, h)
        f1 = self.base_features
        f2, f3, f4 = 2 * f1, 4 * f1, 8 * f1
        rng = np.random.default_rng(seed)
        cv = lambda a, b, s=1: Conv2d(a, b, stride=s, rng=rng)
        self.e1a, self.e1b, self.d1 = cv(c, f1), cv(f1, f1), cv(f1, f2, 2)
        self.e2a, self.e2b, self.d2 = cv(f2, f2), cv(f2, f2), cv(f2, f3, 2)
        self.e3a, self.e3b, self.d3 = cv(f3, f3), cv(f3, f3), cv(f3, f4, 2)
        self.ba, self.bb = cv(f4, f4), cv(f4, f4)
        self.u3, self.m3a, self.m3b = cv(f4, f3), cv(2 * f3, f3), cv(f3, f3)
        self.u2, self.m2a, self.m2b = cv(f3, f2), cv(2 * f2, f2), cv(f2, f2)
        self.u1, self.m1a, self.m1b = cv(f2, f1), cv(2 * f1, f1), cv(f1, f1)
        self.head = cv(f1, c)
        self._acts = None

    @property
    def layers(self):
        return [getattr(self, name) for name in _LAYERS]

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def forward_logits(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        """x is NHWC float32 in [0, 1]; returns NHWC logits."""
        f1 = self.base_features
        a1 = elu(self.e1a.forward(x, keep))
        a2 = elu(self.e1b.forward(a1, keep))
        b0 = elu(self.d1.forward(a2, keep))
        b1 = elu(self.e2a.forward(b0, keep))
        b2 = elu(self.e2b.forward(b1, keep))
        c0 = elu(self.d2.forward(b2, keep))
        c1 = elu(self.e3a.forward(c0, keep))
        c2 = elu(self.e3b.forward(c1, keep))
        d0 = elu(self.d3.forward(c2, keep))
        d1_ = elu(self.ba.forward(d0, keep))
        d2_ = elu(self.bb.forward(d1_, keep))
        u3o = elu(self.u3.forward(upsample2(d2_), keep))
        e1_ = elu(self.m3a.forward(np.concatenate([u3o, c2], axis=3), keep))
        e2_ = elu(self.m3b.forward(e1_, keep))
        u2o = elu(self.u2.forward(upsample2(e2_), keep))
        g1 = elu(self.m2a.forward(np.concatenate([u2o, b2], axis=3), keep))
        g2 = elu(self.m2b.forward(g1, keep))
        u1o = elu(self.u1.forward(upsample2(g2), keep))
        h1 = elu(self.m1a.forward(np.concatenate([u1o, a2], axis=3), keep))
        h2 = elu(self.m1b.forward(h1, keep))
        logits = self.head.forward(h2, keep)
        if keep:
            self._acts = (a1, a2, b0, b1, b2, c0, c1, c2, d0, d1_, d2_, u3o, e1_, e2_, u2o, g1, g2, u1o, h1, h2)
        return logits

    def backward(self, dlogits: np.ndarray) -> None:
        f1 = self.base_features
        f2, f3 = 2 * f1, 4 * f1
        (a1, a2, b0, b1, b2, c0, c1, c2, d0, d1_, d2_,
         u3o, e1_, e2_, u2o, g1, g2, u1o, h1, h2) = self._acts
        dh2 = self.head.backward(dlogits)
        dh1 = self.m1b.backward(elu_backward(dh2, h2))
        dm1in = self.m1a.backward(elu_backward(dh1, h1))
        du1o, da2_skip = dm1in[..., :f1], dm1in[..., f1:]
        dg2 = upsample2_backward(self.u1.backward(elu_backward(du1o, u1o)))
        dg1 = self.m2b.backward(elu_backward(dg2, g2))
        dm2in = self.m2a.backward(elu_backward(dg1, g1))
        du2o, db2_skip = dm2in[..., :f2], dm2in[..., f2:]
        de2 = upsample2_backward(self.u2.backward(elu_backward(du2o, u2o)))
        de1 = self.m3b.backward(elu_backward(de2, e2_))
        dm3in = self.m3a.backward(elu_backward(de1, e1_))
        du3o, dc2_skip = dm3in[..., :f3], dm3in[..., f3:]
        dd2 = upsample2_backward(self.u3.backward(elu_backward(du3o, u3o)))
        dd1 = self.bb.backward(elu_backward(dd2, d2_))
        dd0 = self.ba.backward(elu_backward(dd1, d1_))
        dc2 = self.d3.backward(elu_backward(dd0, d0)) + dc2_skip
        dc1 = self.e3b.backward(elu_backward(dc2, c2))
        dc0 = self.e3a.backward(elu_backward(dc1, c1))
        db2 = self.d2.backward(elu_backward(dc0, c0)) + db2_skip
        db1 = self.e2b.backward(elu_backward(db2, b2))
        db0 = self.e2a.backward(elu_backward(db1, b1))
        da2 = self.d1.backward(elu_backward(db0, b0)) + da2_skip
        da1 = self.e1b.backward(elu_backward(da2, a2))
        self.e1a.backward(elu_backward(da1, a1))
        self._acts = None

    def forward(self, maps: np.ndarray) -> np.ndarray:
        """Probabilities in (0, 1) for (c, w, h) or (n, c, w, h) signal maps."""
        maps = np.asarray(maps)
        single = maps.ndim == 3
        if single:
            maps = maps[None]
        if maps.shape[1:] != self.shape:
            raise ValueError(f"shape mismatch {maps.shape[1:]} vs {self.shape}")
        x = np.ascontiguousarray(maps.astype(np.float32).transpose(0, 2, 3, 1))
        logits = self.forward_logits(x)
        probs = sigmoid(logits).transpose(0, 3, 1, 2)
        return probs[0] if single else probs


def restore(model: RestorerModel, s: np.ndarray) -> np.ndarray:
    """Threshold the restorer output at 0.5 (ties to 1) back to a signal map."""
    return (model.forward(s) >= 0.5).astype(np.uint8)


@dataclass
class GnrTrainConfig:
    """Desk-scale training defaults; ranges of None disable that component."""

    learning_rate: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 32
    steps: int = 2000
    rotation: tuple[float, float] | None = (-180.0, 180.0)
    crop: tuple[float, float] | None = (0.70, 1.0)
    flip_p: float = 0.35
    base_features: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 2 or self.steps < 1:
            raise ValueError("hyperparameters must be positive (batch size >= 2)")
        if not 0.0 <= self.flip_p < 1.0:
            raise ValueError("flip_p must lie in [0, 1)")


def sample_family_transform(config: GnrTrainConfig, rng: np.random.Generator) -> TransformSpec:
    """One draw from the training transform family (rotate, crop, then flips)."""
    parts = []
    if config.rotation is not None:
        lo, hi = config.rotation
        parts.append(TransformSpec.rotate(float(rng.uniform(lo, hi)), rng_seed=int(rng.integers(2**63))))
    if config.crop is not None:
        lo, hi = config.crop
        parts.append(TransformSpec.crop_rescale(float(rng.uniform(lo, hi)), rng_seed=int(rng.integers(2**63))))
    if config.flip_p > 0:
        parts.append(TransformSpec.sign_flip(config.flip_p, rng_seed=int(rng.integers(2**63))))
    if not parts:
        return TransformSpec.identity()
    return TransformSpec.compose(parts)


def watermarked_signal_maps(
    n: int, s: np.ndarray, fp: FreqPattern, rng: np.random.Generator
) -> np.ndarray:
    """Sign maps of freshly dual-injected latents (fixed message, fresh carrier)."""
    z = rng.standard_normal((n,) + tuple(s.shape)).astype(np.float32)
    signs = (2.0 * s.astype(np.float32) - 1.0)[None]
    dual = inject_freq_batch(np.abs(z) * signs, fp)
    return sign_map(dual)


def train_restorer(
    config: GnrTrainConfig,
    s: np.ndarray,
    fp: FreqPattern,
    progress=None,
):
    """Train a restorer for the watermark signal map `s` and ring pattern `fp`.

    Each step builds a fresh half-positive / half-negative batch, takes one
    first-order update on the mean BCE, and records the loss. Returns
    (model, loss_history).
    """
    shape = tuple(s.shape)
    model = RestorerModel(config.base_features, shape, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config.optimizer, model.params, config.learning_rate)
    n_pos = config.batch_size // 2
    n_neg = config.batch_size - n_pos
    losses = np.zeros(config.steps, dtype=np.float64)
    for step in range(config.steps):
        targets_pos = watermarked_signal_maps(n_pos, s, fp, rng)
        inputs_pos = np.stack(
            [apply_transform(t, sample_family_transform(config, rng)) for t in targets_pos]
        )
        raw_neg = (rng.random((n_neg,) + shape) < 0.5).astype(np.uint8)
        inputs_neg = np.stack(
            [apply_transform(u, sample_family_transform(config, rng)) for u in raw_neg]
        )
        x = np.concatenate([inputs_pos, inputs_neg]).astype(np.float32)
        y = np.concatenate([targets_pos, inputs_neg]).astype(np.float32)
        x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        y = np.ascontiguousarray(y.transpose(0, 2, 3, 1))
        logits = model.forward_logits(x, keep=True)
        loss = bce_with_logits(logits, y)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}", step=step)
        losses[step] = loss
        model.backward(bce_grad(logits, y))
        opt.step(model.grads)
        if progress is not None:
            progress(step, loss)
    return model, losses


def save_restorer(model: RestorerModel, path) -> None:
    buf = bytearray()
    buf += MODEL_MAGIC
    buf += struct.pack("<II", MODEL_VERSION, model.base_features)
    buf += struct.pack("<III", *model.shape)
    for idx, arr in enumerate(model.params):
        buf += struct.pack("<IQ", idx, arr.size)
        buf += np.ascontiguousarray(arr, dtype=np.float32).tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    Path(path).write_bytes(bytes(buf))


def load_restorer(path) -> RestorerModel:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}")
    if len(blob) < 24:
        raise TruncatedError("header incomplete")
    version, base = struct.unpack_from("<II", blob, 4)
    if version != MODEL_VERSION:
        raise BadVersionError(f"unsupported model version {version}")
    shape = struct.unpack_from("<III", blob, 12)
    try:
        model = RestorerModel(base, shape, seed=0)
    except ValueError as e:
        raise PayloadError(f"invalid declared architecture: {e}") from e
    off = 24
    for idx, arr in enumerate(model.params):
        if off + 12 > len(blob) - 4:
            raise TruncatedError(f"missing parameter block {idx}")
        bid, count = struct.unpack_from("<IQ", blob, off)
        if bid != idx:
            raise PayloadError(f"parameter block {idx} carries id {bid}")
        if count != arr.size:
            raise PayloadError(
                f"block {idx} holds {count} values, architecture expects {arr.size}"
            )
        off += 12
        end = off + 4 * count
        if end > len(blob) - 4:
            raise TruncatedError(f"parameter block {idx} payload short")
        arr[...] = np.frombuffer(blob[off:end], dtype="<f4").reshape(arr.shape)
        off += 4 * count
    if off != len(blob) - 4:
        raise PayloadError("trailing bytes before CRC")
    (crc,) = struct.unpack_from("<I", blob, off)
    if zlib.crc32(blob[:off]) != crc:
        raise PayloadError("CRC mismatch")
    return model
