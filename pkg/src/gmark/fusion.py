"""Learned fusion of the two detection scores into one decision score.

A two-layer MLP (2 -> hidden -> 1, tanh between, logistic output) is
trained with binary cross-entropy on (spatial, frequency) score pairs from
watermarked and unwatermarked samples. Scores are standardized with the
training set's mean and standard deviation; the constants live inside the
model so a saved fuser is self-contained.
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
from .nn import bce_with_logits, make_optimizer, sigmoid

FUSER_MAGIC = b"GMFU"
FUSER_VERSION = 1


@dataclass
class FuserTrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 200
    steps: int = 1000
    optimizer: str = "sgd"
    hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.steps < 1 or self.hidden < 1:
            raise ValueError("hyperparameters must be positive")


class FuserModel:
    """2 -> hidden -> 1 MLP over standardized (spatial, frequency) scores."""

    def __init__(self, hidden: int = 16, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.hidden = int(hidden)
        self.mean = np.zeros(2, dtype=np.float64)
        self.std = np.ones(2, dtype=np.float64)
        self.w1 = (rng.standard_normal((2, hidden)) / np.sqrt(2.0)).astype(np.float64)
        self.b1 = np.zeros(hidden, dtype=np.float64)
        self.w2 = (rng.standard_normal((hidden, 1)) / np.sqrt(hidden)).astype(np.float64)
        self.b2 = np.zeros(1, dtype=np.float64)

    @property
    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def logits(self, pairs: np.ndarray, cache: dict | None = None) -> np.ndarray:
        z = (pairs - self.mean) / self.std
        pre = z @ self.w1 + self.b1
        hid = np.tanh(pre)
        out = (hid @ self.w2 + self.b2).reshape(-1)
        if cache is not None:
            cache.update(z=z, hid=hid)
        return out

    def backward(self, cache: dict, dlogit: np.ndarray):
        dout = dlogit.reshape(-1, 1)
        dw2 = cache["hid"].T @ dout
        db2 = dout.sum(axis=0)
        dhid = (dout @ self.w2.T) * (1.0 - cache["hid"] ** 2)
        dw1 = cache["z"].T @ dhid
        db1 = dhid.sum(axis=0)
        return [dw1, db1, dw2, db2]

    def score(self, spatial_score: float, freq_score: float) -> float:
        pair = np.array([[spatial_score, freq_score]], dtype=np.float64)
        if not np.all(np.isfinite(pair)):
            raise ValueError("scores must be finite")
        return float(sigmoid(self.logits(pair))[0])

    def score_many(self, pairs: np.ndarray) -> np.ndarray:
        pairs = np.asarray(pairs, dtype=np.float64)
        if not np.all(np.isfinite(pairs)):
            raise ValueError("scores must be finite")
        return sigmoid(self.logits(pairs))


def train_fuser(config: FuserTrainConfig, pos_pairs, neg_pairs) -> FuserModel:
    """Fit the fuser on positive/negative (spatial, frequency) score pairs."""
    pos = np.asarray(pos_pairs, dtype=np.float64).reshape(-1, 2)
    neg = np.asarray(neg_pairs, dtype=np.float64).reshape(-1, 2)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one score pair per class")
    data = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    model = FuserModel(hidden=config.hidden, seed=config.seed)
    model.mean = data.mean(axis=0)
    model.std = data.std(axis=0)
    if np.any(model.std == 0):
        raise ValueError("degenerate training data: a score dimension has zero variance")
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config.optimizer, model.params, config.learning_rate)
    for step in range(config.steps):
        idx = rng.integers(0, len(data), size=min(config.batch_size, len(data)))
        batch, yb = data[idx], labels[idx]
        cache = {}
        logits = model.logits(batch, cache)
        loss = bce_with_logits(logits, yb)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}", step=step)
        dlogit = (sigmoid(logits) - yb) / len(yb)
        opt.step(model.backward(cache, dlogit))
    return model


def training_accuracy(model: FuserModel, pos_pairs, neg_pairs) -> float:
    pos = model.score_many(pos_pairs)
    neg = model.score_many(neg_pairs)
    return float((np.sum(pos >= 0.5) + np.sum(neg < 0.5)) / (len(pos) + len(neg)))


def save_fuser(model: FuserModel, path) -> None:
    buf = bytearray()
    buf += FUSER_MAGIC
    buf += struct.pack("<II", FUSER_VERSION, model.hidden)
    blocks = [model.mean, model.std, model.w1, model.b1, model.w2, model.b2]
    for idx, arr in enumerate(blocks):
        buf += struct.pack("<IQ", idx, arr.size)
        buf += np.ascontiguousarray(arr, dtype=np.float64).tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    Path(path).write_bytes(bytes(buf))


def load_fuser(path) -> FuserModel:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != FUSER_MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise TruncatedError("header incomplete")
    version, hidden = struct.unpack_from("<II", blob, 4)
    if version != FUSER_VERSION:
        raise BadVersionError(f"unsupported fuser version {version}")
    model = FuserModel(hidden=hidden, seed=0)
    blocks = [model.mean, model.std, model.w1, model.b1, model.w2, model.b2]
    off = 12
    for idx, arr in enumerate(blocks):
        if off + 12 > len(blob) - 4:
            raise TruncatedError(f"missing block {idx}")
        bid, count = struct.unpack_from("<IQ", blob, off)
        if bid != idx or count != arr.size:
            raise PayloadError(f"block {idx} malformed (id {bid}, {count} values)")
        off += 12
        end = off + 8 * count
        if end > len(blob) - 4:
            raise TruncatedError(f"block {idx} payload short")
        arr[...] = np.frombuffer(blob[off:end], dtype="<f8").reshape(arr.shape)
        off += 8 * count
    if off != len(blob) - 4:
        raise PayloadError("trailing bytes before CRC")
    (crc,) = struct.unpack_from("<I", blob, off)
    if zlib.crc32(blob[:off]) != crc:
        raise PayloadError("CRC mismatch")
    return model
