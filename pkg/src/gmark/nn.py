"""Minimal neural-net building blocks with explicit backprop.

Image layers run NHWC in float32 (float64 passes through unchanged, which
the finite-difference tests rely on). Convolutions are 3x3 with zero
padding 1, stride 1 or 2, computed as nine tap GEMMs directly on strided
views of the padded input; nothing like an im2col matrix is materialized,
which keeps the step memory-bandwidth bound only on the activations.
The stride-1 input gradient reuses the same tap-GEMM kernel on the padded
output gradient with the spatially flipped, transposed filter.
"""

from __future__ import annotations

import numpy as np


def _pad1(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))


def _tap_conv(xp: np.ndarray, w: np.ndarray, stride: int, out_hw) -> np.ndarray:
    """Sum over the 9 kernel taps of (shifted view) @ w[tap]."""
    ho, wo = out_hw
    y = None
    for ki in range(3):
        for kj in range(3):
            v = xp[:, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride, :]
            term = v @ w[ki, kj]
            y = term if y is None else y + term
    return y


class Conv2d:
    """3x3 convolution, padding 1, He-initialized."""

    def __init__(self, cin: int, cout: int, stride: int = 1, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / (9.0 * cin))
        self.w = (rng.standard_normal((3, 3, cin, cout)) * scale).astype(np.float32)
        self.b = np.zeros(cout, dtype=np.float32)
        self.stride = stride
        self.cin, self.cout = cin, cout
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._xp = None
        self._out_hw = None

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        if x.shape[-1] != self.cin:
            raise ValueError(f"expected {self.cin} input channels, got {x.shape[-1]}")
        xp = _pad1(x)
        ho = (x.shape[1] + 2 - 3) // self.stride + 1
        wo = (x.shape[2] + 2 - 3) // self.stride + 1
        y = _tap_conv(xp, self.w, self.stride, (ho, wo))
        y += self.b
        if keep:
            self._xp = xp
            self._out_hw = (ho, wo)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xp = self._xp
        ho, wo = self._out_hw
        s = self.stride
        dw = np.empty_like(self.w, dtype=dy.dtype)
        for ki in range(3):
            for kj in range(3):
                v = xp[:, ki : ki + s * ho : s, kj : kj + s * wo : s, :]
                prod = np.matmul(v.transpose(0, 1, 3, 2), dy)  # (B,Ho,Ci,Co)
                dw[ki, kj] = prod.sum(axis=(0, 1))
        self.dw = dw
        self.db = dy.sum(axis=(0, 1, 2))
        b, h2, w2, _ = xp.shape
        if s == 1:
            # full correlation: forward pass over padded dy with flipped kernel
            wt = self.w[::-1, ::-1].transpose(0, 1, 3, 2)
            dx = _tap_conv(_pad1(dy), wt, 1, (h2 - 2, w2 - 2))
        else:
            dxp = np.zeros(xp.shape, dtype=dy.dtype)
            wm = self.w.reshape(9, self.cin, self.cout)
            for t in range(9):
                ki, kj = divmod(t, 3)
                dxp[:, ki : ki + s * ho : s, kj : kj + s * wo : s, :] += dy @ wm[t].T
            dx = dxp[:, 1 : h2 - 1, 1 : w2 - 1, :]
        self._xp = None
        return dx

    @property
    def params(self):
        return [self.w, self.b]

    @property
    def grads(self):
        return [self.dw, self.db]


def elu(x: np.ndarray) -> np.ndarray:
    """Exponential linear unit, C1-smooth so finite differences stay clean."""
    out = x.copy()
    neg = x <= 0
    out[neg] = np.expm1(x[neg])
    return out


def elu_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * np.where(y > 0, 1.0, y + 1.0).astype(dy.dtype)


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling on NHWC."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dy: np.ndarray) -> np.ndarray:
    b, h2, w2, c = dy.shape
    return dy.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean binary cross-entropy evaluated stably from logits."""
    z = logits.astype(np.float64)
    y = targets.astype(np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - z * y))


def bce_grad(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    p = sigmoid(logits)
    return ((p - targets) / logits.size).astype(logits.dtype)


class Sgd:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = self.lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= corr * m / (np.sqrt(v) + self.eps)


def make_optimizer(name: str, params, lr: float):
    if name == "sgd":
        return Sgd(params, lr)
    if name == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")


def numerical_gradient(f, arr: np.ndarray, index, eps: float = 1e-3) -> float:
    """Central finite difference of scalar f() w.r.t. one entry of arr."""
    orig = arr[index]
    arr[index] = orig + eps
    hi = f()
    arr[index] = orig - eps
    lo = f()
    arr[index] = orig
    return (hi - lo) / (2.0 * eps)


def cast_model_params(layers, dtype) -> None:
    """Convert every layer's parameters in place (used by precision checks)."""
    for layer in layers:
        layer.w = layer.w.astype(dtype)
        layer.b = layer.b.astype(dtype)
