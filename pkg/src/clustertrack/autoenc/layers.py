"""Numpy layer primitives with exact analytic gradients.

Convolutions use half padding so a stride-2 layer exactly halves an even
input size; the transposed convolution is implemented as the exact adjoint
of the forward convolution (same weight tensor layout, same padding), which
makes gradient checking and decoder mirroring straightforward.

Tensor layout: activations are (batch, height, width, channels); conv
weights are (kh, kw, c_in, c_out). Transposed-conv weights are stored as the
weights of the mirrored convolution, i.e. (kh, kw, c_large, c_small) where
c_small is the channel count on the low-resolution side.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "same_pad",
    "conv2d",
    "conv2d_backward",
    "conv_transpose2d",
    "conv_transpose2d_backward",
    "dense",
    "dense_backward",
    "relu",
    "relu_grad",
    "sigmoid",
]


def same_pad(in_size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output size and (before, after) padding for half-padded convolution."""
    out = -(-in_size // stride)
    pad = max((out - 1) * stride + kernel - in_size, 0)
    return out, pad // 2, pad - pad // 2


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    batch, h, wd, _ = x.shape
    kh, kw, _, c_out = w.shape
    oh, pt, pb = same_pad(h, kh, stride)
    ow, pl, pr = same_pad(wd, kw, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    y = np.zeros((batch, oh, ow, c_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
            y += xs @ w[i, j]
    return y + b


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, stride: int, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of conv2d given upstream gradient gy."""
    batch, h, wd, _ = x.shape
    kh, kw, _, _ = w.shape
    oh, pt, pb = same_pad(h, kh, stride)
    ow, pl, pr = same_pad(wd, kw, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            sl = np.s_[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
            dw[i, j] = np.tensordot(xp[sl], gy, axes=([0, 1, 2], [0, 1, 2]))
            dxp[sl] += gy @ w[i, j].T
    dx = dxp[:, pt : pt + h, pl : pl + wd, :]
    db = gy.sum(axis=(0, 1, 2))
    return dx, dw, db


def conv_transpose2d(
    z: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, out_h: int, out_w: int
) -> np.ndarray:
    """Adjoint of conv2d: upsample (B, h, w, c_small) to (B, out_h, out_w, c_large)."""
    batch, h, wd, _ = z.shape
    kh, kw, c_large, _ = w.shape
    oh, pt, pb = same_pad(out_h, kh, stride)
    ow, pl, pr = same_pad(out_w, kw, stride)
    if (oh, ow) != (h, wd):
        raise ValueError(f"transpose conv input {(h, wd)} incompatible with output {(out_h, out_w)}")
    yp = np.zeros((batch, out_h + pt + pb, out_w + pl + pr, c_large), dtype=z.dtype)
    for i in range(kh):
        for j in range(kw):
            yp[:, i : i + stride * h : stride, j : j + stride * wd : stride, :] += z @ np.swapaxes(
                w[i, j], 0, 1
            )
    y = yp[:, pt : pt + out_h, pl : pl + out_w, :]
    return y + b


def conv_transpose2d_backward(
    z: np.ndarray, w: np.ndarray, stride: int, out_h: int, out_w: int, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dz, dw, db) of conv_transpose2d given upstream gradient gy."""
    batch, h, wd, _ = z.shape
    kh, kw, _, _ = w.shape
    _, pt, pb = same_pad(out_h, kh, stride)
    _, pl, pr = same_pad(out_w, kw, stride)
    gp = np.pad(gy, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    dz = np.zeros_like(z)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            gs = gp[:, i : i + stride * h : stride, j : j + stride * wd : stride, :]
            dz += gs @ w[i, j]
            dw[i, j] = np.tensordot(gs, z, axes=([0, 1, 2], [0, 1, 2]))
    db = gy.sum(axis=(0, 1, 2))
    return dz, dw, db


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def dense_backward(
    x: np.ndarray, w: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(pre: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return gy * (pre > 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
