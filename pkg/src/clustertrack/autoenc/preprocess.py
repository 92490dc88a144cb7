"""Mask conditioning for the autoencoder input grid.

A crop is isotropically scaled so its largest dimension equals the model's
mask size, centered along the smaller dimension, and zero-padded square.
Binary masks resize by coverage (any covered source pixel sets the output
pixel), which preserves thin structures and guarantees a non-empty result
for non-empty input; RGB masks resize bilinearly inside the binary support.
"""

from __future__ import annotations

import numpy as np

from ..core import Mask

__all__ = ["preprocess_mask"]


def _axis_windows(in_size: int, out_size: int) -> list[tuple[int, int]]:
    bounds = [(i * in_size) // out_size for i in range(out_size + 1)]
    return [(lo, max(hi, lo + 1)) for lo, hi in zip(bounds[:-1], bounds[1:])]


def _resize_binary(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    rows = _axis_windows(grid.shape[0], out_h)
    cols = _axis_windows(grid.shape[1], out_w)
    row_hit = np.array([grid[lo:hi].max(axis=0) for lo, hi in rows])
    return np.array([row_hit[:, lo:hi].max(axis=1) for lo, hi in cols]).T


def _resize_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = grid.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    g = grid
    top = g[y0][:, x0] * (1 - wx) + g[y0][:, x1] * wx
    bot = g[y1][:, x0] * (1 - wx) + g[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def preprocess_mask(m: Mask, mask_size: int) -> np.ndarray:
    """Scale, center, and pad a mask crop to (mask_size, mask_size, channels)."""
    sup = m.support()
    if sup.sum() == 0:
        raise ValueError("cannot preprocess a mask with empty support")
    w, h = m.width, m.height
    if w >= h:
        new_w = mask_size
        new_h = max(1, round(h * mask_size / w))
    else:
        new_h = mask_size
        new_w = max(1, round(w * mask_size / h))
    new_sup = _resize_binary(sup, new_h, new_w)
    if m.channels == 1:
        scaled = new_sup[:, :, None]
    else:
        scaled = np.clip(_resize_bilinear(m.data, new_h, new_w), 0.0, 1.0)
        scaled *= new_sup[:, :, None]
    pad_t = (mask_size - new_h) // 2
    pad_l = (mask_size - new_w) // 2
    out = np.zeros((mask_size, mask_size, m.channels), dtype=np.float64)
    out[pad_t : pad_t + new_h, pad_l : pad_l + new_w, :] = scaled
    return out
