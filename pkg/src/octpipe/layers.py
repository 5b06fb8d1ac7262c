"""Layer forward/backward math for the classifier.

Everything runs in float32 (accumulations included), matching commodity deep
learning practice; test oracles are free to use float64.  Functions accept a
single sample ([C,H,W] / [K]) or a leading batch axis and preserve it.

The production convolution is im2col + one BLAS matmul; a direct
kernel-offset summation (`conv2d_forward_naive`) ships alongside as the
built-in cross-check and the two must agree within 1e-4.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import ConfigError
from .rng import Rng

F32 = np.float32


def _as_batch(x: np.ndarray, ndim_single: int) -> tuple[np.ndarray, bool]:
    if x.ndim == ndim_single:
        return x[None], True
    if x.ndim == ndim_single + 1:
        return x, False
    raise ConfigError(f"expected {ndim_single}D or {ndim_single + 1}D tensor, got {x.ndim}D")


def _f32(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=F32)


# ----------------------------------------------------------------- conv ----

def _check_conv_shapes(x4: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> None:
    if weights.ndim != 4 or weights.shape[2:] != (3, 3):
        raise ConfigError(f"conv weights must be [F,C,3,3], got {weights.shape}")
    f, c = weights.shape[:2]
    if bias.shape != (f,):
        raise ConfigError(f"conv bias must be [{f}], got {bias.shape}")
    if x4.shape[1] != c:
        raise ConfigError(f"conv input has {x4.shape[1]} channels, weights expect {c}")
    if x4.shape[2] < 1 or x4.shape[3] < 1:
        raise ConfigError("conv input needs H,W >= 1")


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 convolution, stride 1, zero padding 1 (same-size output)."""
    x4, single = _as_batch(_f32(x), 3)
    weights = _f32(weights)
    bias = _f32(bias)
    _check_conv_shapes(x4, weights, bias)
    n, c, h, w = x4.shape
    f = weights.shape[0]
    cols = kernels.im2col3x3(x4)                      # [N, H*W, C*9]
    out = cols @ weights.reshape(f, c * 9).T          # [N, H*W, F]
    out += bias
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(n, f, h, w)
    return out[0] if single else out


def conv2d_forward_naive(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Direct evaluation of the convolution sum; reference path for the GEMM route."""
    x4, single = _as_batch(_f32(x), 3)
    weights = _f32(weights)
    bias = _f32(bias)
    _check_conv_shapes(x4, weights, bias)
    n, c, h, w = x4.shape
    f = weights.shape[0]
    xp = np.zeros((n, c, h + 2, w + 2), dtype=F32)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x4
    out = np.empty((n, f, h, w), dtype=F32)
    for fi in range(f):
        acc = np.full((n, h, w), bias[fi], dtype=F32)
        for ci in range(c):
            for dy in range(3):
                for dx in range(3):
                    acc += weights[fi, ci, dy, dx] * xp[:, ci, dy : dy + h, dx : dx + w]
        out[:, fi] = acc
    return out[0] if single else out


def conv2d_backward(
    x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of conv2d_forward: (grad_input, grad_weights, grad_bias)."""
    x4, single = _as_batch(_f32(x), 3)
    g4, gsingle = _as_batch(_f32(grad_out), 3)
    weights = _f32(weights)
    if single != gsingle or g4.shape[0] != x4.shape[0]:
        raise ConfigError("conv grad_out batch does not match input")
    n, c, h, w = x4.shape
    f = weights.shape[0]
    if g4.shape != (n, f, h, w):
        raise ConfigError(f"conv grad_out must be {(n, f, h, w)}, got {g4.shape}")
    cols = kernels.im2col3x3(x4)                          # [N, HW, C9]
    g_hwf = np.ascontiguousarray(g4.reshape(n, f, h * w).transpose(0, 2, 1))
    grad_bias = g4.sum(axis=(0, 2, 3))
    gflat = np.ascontiguousarray(g4.reshape(n, f, h * w).transpose(1, 0, 2)).reshape(f, n * h * w)
    grad_w = (gflat @ cols.reshape(n * h * w, c * 9)).reshape(f, c, 3, 3)
    gcols = g_hwf @ weights.reshape(f, c * 9)             # [N, HW, C9]
    grad_x = kernels.col2im3x3(np.ascontiguousarray(gcols), h, w)
    if single:
        return grad_x[0], grad_w, grad_bias
    return grad_x, grad_w, grad_bias


# ----------------------------------------------------------------- relu ----

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(_f32(x), F32(0.0))


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is defined as 0
    return np.where(np.asarray(x) > 0, _f32(grad_out), F32(0.0))


# ----------------------------------------------------------------- pool ----

def maxpool2x2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ceil-mode 2x2/stride-2 max pool; odd edges padded with -inf.

    Returns the pooled tensor and the per-window argmax codes needed to route
    gradients back (code = wy*2 + wx inside the window).
    """
    x4, single = _as_batch(_f32(x), 3)
    if x4.shape[2] < 1 or x4.shape[3] < 1:
        raise ConfigError("maxpool input needs H,W >= 1")
    out, idx = kernels.maxpool2_forward(x4)
    return (out[0], idx[0]) if single else (out, idx)


def maxpool2x2_backward(grad_out: np.ndarray, idx: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    g4, single = _as_batch(_f32(grad_out), 3)
    i4, _ = _as_batch(np.asarray(idx), 3)
    gx = kernels.maxpool2_backward(g4, i4, in_h, in_w)
    return gx[0] if single else gx


# ---------------------------------------------------------------- dense ----

def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    x2, single = _as_batch(_f32(x), 1)
    weights = _f32(weights)
    bias = _f32(bias)
    m, k = weights.shape
    if x2.shape[1] != k or bias.shape != (m,):
        raise ConfigError(
            f"dense shapes mismatch: input {x2.shape[1]}, weights {weights.shape}, bias {bias.shape}"
        )
    out = x2 @ weights.T + bias
    return out[0] if single else out


def dense_backward(
    x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x2, single = _as_batch(_f32(x), 1)
    g2, gsingle = _as_batch(_f32(grad_out), 1)
    weights = _f32(weights)
    if single != gsingle or g2.shape != (x2.shape[0], weights.shape[0]):
        raise ConfigError("dense grad_out shape does not match")
    grad_x = g2 @ weights
    grad_w = g2.T @ x2
    grad_b = g2.sum(axis=0)
    if single:
        return grad_x[0], grad_w, grad_b
    return grad_x, grad_w, grad_b


# -------------------------------------------------------------- softmax ----

def softmax_xent(
    logits: np.ndarray, label: np.ndarray | int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Softmax + cross-entropy, max-subtracted for stability.

    Returns (probs, loss, grad_logits); per-sample values when batched.
    """
    l2, single = _as_batch(_f32(logits), 1)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    n, k = l2.shape
    shifted = l2 - l2.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    picked = probs[np.arange(n), labels]
    loss = -np.log(picked)
    grad = probs.copy()
    grad[np.arange(n), labels] -= F32(1.0)
    if single:
        return probs[0], F32(loss[0]), grad[0]
    return probs, loss, grad


# ----------------------------------------------------------------- init ----

def xavier_init(fan_in: int, fan_out: int, rng: Rng, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Glorot-uniform samples in +/- sqrt(6/(fan_in+fan_out)), float32.

    The bound is rounded down to the nearest float32 so no sample can exceed
    the exact real-valued bound after rounding.
    """
    if fan_in < 1 or fan_out < 1:
        raise ConfigError("xavier_init needs fan_in, fan_out >= 1")
    if shape is None:
        shape = (fan_out, fan_in)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    b32 = F32(bound)
    if float(b32) > bound:
        b32 = np.nextafter(b32, F32(0.0))
    n = int(np.prod(shape))
    r = (2.0 * rng.uniform01(n) - 1.0).astype(F32)
    return (r * b32).reshape(shape)


# ------------------------------------------------------------------ sgd ----

def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """Plain SGD update p - lr*g, returned as a new float32 array."""
    p = _f32(params)
    g = _f32(grads)
    if p.shape != g.shape:
        raise ConfigError(f"sgd shapes mismatch: {p.shape} vs {g.shape}")
    return p - F32(lr) * g
