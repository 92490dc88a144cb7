"""Twin-branch autoencoder fusing mask and box reconstructions.

The mask branch is a strided convolutional encoder/decoder pair; the box
branch is a single fully connected layer on each side. Their features are
concatenated, projected to the latent code by a linear fusion layer, and
expanded back by a mirrored layer before decoding. The training loss weighs
the two reconstruction errors by learned per-task log-variances ``s_m`` and
``s_b``:

    L = 1/2 e^{-s_b} mse_b + 1/2 e^{-s_m} mse_m + 1/2 s_b + 1/2 s_m

where each mse is the per-element mean squared residual, so both terms start
at comparable magnitude regardless of mask resolution. Single-branch
configurations (``branches="loc"`` or ``"shape"``) keep only the matching
encoder, decoder, and loss term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .layers import (
    conv2d,
    conv2d_backward,
    conv_transpose2d,
    conv_transpose2d_backward,
    dense,
    dense_backward,
    glorot_uniform,
    relu,
    relu_grad,
    sigmoid,
)

__all__ = ["AutoencoderConfig", "AutoencoderParams", "LatentCode", "glorot_init", "forward", "loss", "backward", "loss_and_grads"]

BRANCHES = ("both", "loc", "shape")


@dataclass(frozen=True)
class AutoencoderConfig:
    mask_size: int = 32
    channels: int = 1
    box_dim: int = 4
    latent: int = 32
    conv_channels: tuple[int, ...] = (16, 16, 32, 32, 64)
    kernel: int = 3
    stride: int = 2
    branches: str = "both"

    def __post_init__(self) -> None:
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.branches not in BRANCHES:
            raise ValueError(f"branches must be one of {BRANCHES}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.has_mask_branch:
            down = self.stride ** len(self.conv_channels)
            if self.mask_size % down != 0:
                raise ValueError(
                    f"mask_size {self.mask_size} not divisible by stride^layers = {down}"
                )

    @property
    def has_mask_branch(self) -> bool:
        return self.branches in ("both", "shape")

    @property
    def has_box_branch(self) -> bool:
        return self.branches in ("both", "loc")

    @property
    def bottom_size(self) -> int:
        return self.mask_size // self.stride ** len(self.conv_channels)

    @property
    def bottom_flat(self) -> int:
        return self.bottom_size * self.bottom_size * self.conv_channels[-1]

    @property
    def fused_width(self) -> int:
        return self.latent * (2 if self.branches == "both" else 1)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter names and shapes in declaration (checkpoint) order."""
        k, f = self.kernel, self.latent
        shapes: dict[str, tuple[int, ...]] = {}
        if self.has_mask_branch:
            c_prev = self.channels
            for i, c in enumerate(self.conv_channels):
                shapes[f"enc_conv{i}_w"] = (k, k, c_prev, c)
                shapes[f"enc_conv{i}_b"] = (c,)
                c_prev = c
            shapes["enc_mask_fc_w"] = (self.bottom_flat, f)
            shapes["enc_mask_fc_b"] = (f,)
        if self.has_box_branch:
            shapes["enc_box_fc_w"] = (self.box_dim, f)
            shapes["enc_box_fc_b"] = (f,)
        shapes["fuse_w"] = (self.fused_width, f)
        shapes["fuse_b"] = (f,)
        shapes["defuse_w"] = (f, self.fused_width)
        shapes["defuse_b"] = (self.fused_width,)
        if self.has_mask_branch:
            shapes["dec_mask_fc_w"] = (f, self.bottom_flat)
            shapes["dec_mask_fc_b"] = (self.bottom_flat,)
            chain = list(self.conv_channels)
            for i in range(len(chain)):
                small = chain[len(chain) - 1 - i]
                large = chain[len(chain) - 2 - i] if i < len(chain) - 1 else self.channels
                shapes[f"dec_conv{i}_w"] = (k, k, large, small)
                shapes[f"dec_conv{i}_b"] = (large,)
        if self.has_box_branch:
            shapes["dec_box_fc_w"] = (f, self.box_dim)
            shapes["dec_box_fc_b"] = (self.box_dim,)
        if self.has_mask_branch:
            shapes["s_m"] = ()
        if self.has_box_branch:
            shapes["s_b"] = ()
        return shapes


@dataclass
class AutoencoderParams:
    """All trainable arrays, keyed by name in declaration order."""

    config: AutoencoderConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        expected = self.config.param_shapes()
        if list(self.arrays.keys()) != list(expected.keys()):
            raise ValueError("parameter names do not match the config declaration order")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name}: shape {self.arrays[name].shape}, expected {shape}")

    @property
    def s_m(self) -> float:
        return float(self.arrays["s_m"])

    @property
    def s_b(self) -> float:
        return float(self.arrays["s_b"])

    def assert_finite(self) -> None:
        for name, a in self.arrays.items():
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite values in parameter {name}")

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(self.config, {k: v.copy() for k, v in self.arrays.items()})


@dataclass(frozen=True)
class LatentCode:
    """Fused embedding ``z`` plus the pre-fusion concatenated feature."""

    z: np.ndarray
    f: np.ndarray


def glorot_init(cfg: AutoencoderConfig, seed: int) -> AutoencoderParams:
    """Uniform Glorot weights, zero biases, s_b = 1/N and s_m = 1/M^2."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD11A]))
    arrays: dict[str, np.ndarray] = {}
    k = cfg.kernel
    for name, shape in cfg.param_shapes().items():
        if name == "s_m":
            arrays[name] = np.array(1.0 / (cfg.mask_size**2))
        elif name == "s_b":
            arrays[name] = np.array(1.0 / cfg.box_dim)
        elif name.endswith("_b"):
            arrays[name] = np.zeros(shape)
        elif name.startswith(("enc_conv", "dec_conv")):
            kh, kw, c1, c2 = shape
            if name.startswith("enc_conv"):
                fan_in, fan_out = kh * kw * c1, kh * kw * c2
            else:
                # transpose conv maps c2 (small side) to c1 (large side)
                fan_in, fan_out = kh * kw * c2, kh * kw * c1
            arrays[name] = glorot_uniform(rng, shape, fan_in, fan_out)
        else:
            fan_in, fan_out = shape
            arrays[name] = glorot_uniform(rng, shape, fan_in, fan_out)
    return AutoencoderParams(cfg, arrays)


def _forward_cache(
    p: AutoencoderParams, x_m: Optional[np.ndarray], x_b: Optional[np.ndarray]
) -> dict:
    cfg = p.config
    a = p.arrays
    cache: dict = {"x_m": x_m, "x_b": x_b}
    feats = []
    if cfg.has_mask_branch:
        if x_m is None:
            raise ValueError("mask input required for this configuration")
        batch = x_m.shape[0]
        if x_m.shape != (batch, cfg.mask_size, cfg.mask_size, cfg.channels):
            raise ValueError(f"mask input shape {x_m.shape} does not match config")
        act = x_m
        conv_acts = [act]
        conv_pres = []
        for i in range(len(cfg.conv_channels)):
            pre = conv2d(act, a[f"enc_conv{i}_w"], a[f"enc_conv{i}_b"], cfg.stride)
            act = relu(pre)
            conv_pres.append(pre)
            conv_acts.append(act)
        cache["conv_pres"] = conv_pres
        cache["conv_acts"] = conv_acts
        flat = act.reshape(batch, cfg.bottom_flat)
        cache["flat"] = flat
        fm_pre = dense(flat, a["enc_mask_fc_w"], a["enc_mask_fc_b"])
        cache["fm_pre"] = fm_pre
        feats.append(relu(fm_pre))
    if cfg.has_box_branch:
        if x_b is None:
            raise ValueError("box input required for this configuration")
        if x_b.shape[1] != cfg.box_dim:
            raise ValueError(f"box input width {x_b.shape[1]} != {cfg.box_dim}")
        fb_pre = dense(x_b, a["enc_box_fc_w"], a["enc_box_fc_b"])
        cache["fb_pre"] = fb_pre
        feats.append(relu(fb_pre))
    f_cat = np.concatenate(feats, axis=1)
    cache["f_cat"] = f_cat
    z = dense(f_cat, a["fuse_w"], a["fuse_b"])  # linear latent
    cache["z"] = z
    g_pre = dense(z, a["defuse_w"], a["defuse_b"])
    cache["g_pre"] = g_pre
    g = relu(g_pre)
    cache["g"] = g
    col = 0
    if cfg.has_mask_branch:
        gm = g[:, col : col + cfg.latent]
        col += cfg.latent
        dm_pre = dense(gm, a["dec_mask_fc_w"], a["dec_mask_fc_b"])
        cache["dm_pre"] = dm_pre
        u = relu(dm_pre).reshape(-1, cfg.bottom_size, cfg.bottom_size, cfg.conv_channels[-1])
        dec_ins = []
        dec_pres = []
        size = cfg.bottom_size
        n_layers = len(cfg.conv_channels)
        for i in range(n_layers):
            size *= cfg.stride
            dec_ins.append(u)
            pre = conv_transpose2d(u, a[f"dec_conv{i}_w"], a[f"dec_conv{i}_b"], cfg.stride, size, size)
            dec_pres.append(pre)
            u = sigmoid(pre) if i == n_layers - 1 else relu(pre)
        cache["dec_ins"] = dec_ins
        cache["dec_pres"] = dec_pres
        cache["y_m"] = u
    if cfg.has_box_branch:
        gb = g[:, col : col + cfg.latent]
        cache["gb"] = gb
        cache["y_b"] = dense(gb, a["dec_box_fc_w"], a["dec_box_fc_b"])
    if cfg.has_mask_branch:
        cache["gm"] = g[:, : cfg.latent]
    return cache


def forward(
    p: AutoencoderParams, x_m: Optional[np.ndarray], x_b: Optional[np.ndarray]
) -> tuple[Optional[np.ndarray], Optional[np.ndarray], LatentCode]:
    """Reconstructions plus the latent code for a batch of inputs."""
    cache = _forward_cache(p, x_m, x_b)
    return cache.get("y_m"), cache.get("y_b"), LatentCode(z=cache["z"], f=cache["f_cat"])


def _loss_from_cache(
    p: AutoencoderParams,
    cache: dict,
    t_m: Optional[np.ndarray],
    t_b: Optional[np.ndarray],
) -> tuple[float, dict]:
    cfg = p.config
    total = 0.0
    heads: dict = {}
    if cfg.has_mask_branch:
        r_m = cache["y_m"] - t_m
        mean_m = float((r_m**2).mean())
        s_m = p.s_m
        total += 0.5 * math.exp(-s_m) * mean_m + 0.5 * s_m
        heads["r_m"] = r_m
        heads["mean_m"] = mean_m
    if cfg.has_box_branch:
        r_b = cache["y_b"] - t_b
        mean_b = float((r_b**2).mean())
        s_b = p.s_b
        total += 0.5 * math.exp(-s_b) * mean_b + 0.5 * s_b
        heads["r_b"] = r_b
        heads["mean_b"] = mean_b
    return total, heads


def loss(
    p: AutoencoderParams,
    x_m: Optional[np.ndarray],
    x_b: Optional[np.ndarray],
    t_m: Optional[np.ndarray] = None,
    t_b: Optional[np.ndarray] = None,
) -> float:
    """Uncertainty-weighted reconstruction loss; targets default to inputs."""
    cache = _forward_cache(p, x_m, x_b)
    value, _ = _loss_from_cache(p, cache, t_m if t_m is not None else x_m, t_b if t_b is not None else x_b)
    return value


def loss_and_grads(
    p: AutoencoderParams,
    x_m: Optional[np.ndarray],
    x_b: Optional[np.ndarray],
    t_m: Optional[np.ndarray] = None,
    t_b: Optional[np.ndarray] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus exact gradients for every parameter array."""
    cfg = p.config
    a = p.arrays
    cache = _forward_cache(p, x_m, x_b)
    t_m = t_m if t_m is not None else x_m
    t_b = t_b if t_b is not None else x_b
    value, heads = _loss_from_cache(p, cache, t_m, t_b)
    grads: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in a.items()}

    g_parts = []
    if cfg.has_mask_branch:
        s_m = p.s_m
        r_m = heads["r_m"]
        grads["s_m"] = np.array(-0.5 * math.exp(-s_m) * heads["mean_m"] + 0.5)
        dy_m = math.exp(-s_m) * r_m / r_m.size
        # decoder conv stack (last layer is sigmoid, others relu)
        n_layers = len(cfg.conv_channels)
        du = dy_m * cache["y_m"] * (1.0 - cache["y_m"])
        size = cfg.mask_size
        for i in reversed(range(n_layers)):
            if i != n_layers - 1:
                du = relu_grad(cache["dec_pres"][i], du)
            z_in = cache["dec_ins"][i]
            du, dw, db = conv_transpose2d_backward(z_in, a[f"dec_conv{i}_w"], cfg.stride, size, size, du)
            grads[f"dec_conv{i}_w"] = dw
            grads[f"dec_conv{i}_b"] = db
            size //= cfg.stride
        d_dm = relu_grad(cache["dm_pre"], du.reshape(du.shape[0], -1))
        dgm, dw, db = dense_backward(cache["gm"], a["dec_mask_fc_w"], d_dm)
        grads["dec_mask_fc_w"] = dw
        grads["dec_mask_fc_b"] = db
        g_parts.append(dgm)
    if cfg.has_box_branch:
        s_b = p.s_b
        r_b = heads["r_b"]
        grads["s_b"] = np.array(-0.5 * math.exp(-s_b) * heads["mean_b"] + 0.5)
        dy_b = math.exp(-s_b) * r_b / r_b.size
        dgb, dw, db = dense_backward(cache["gb"], a["dec_box_fc_w"], dy_b)
        grads["dec_box_fc_w"] = dw
        grads["dec_box_fc_b"] = db
        g_parts.append(dgb)

    dg = np.concatenate(g_parts, axis=1)
    d_gpre = relu_grad(cache["g_pre"], dg)
    dz, dw, db = dense_backward(cache["z"], a["defuse_w"], d_gpre)
    grads["defuse_w"] = dw
    grads["defuse_b"] = db
    df_cat, dw, db = dense_backward(cache["f_cat"], a["fuse_w"], dz)
    grads["fuse_w"] = dw
    grads["fuse_b"] = db

    col = 0
    if cfg.has_mask_branch:
        dfm = df_cat[:, col : col + cfg.latent]
        col += cfg.latent
        d_fm_pre = relu_grad(cache["fm_pre"], dfm)
        dflat, dw, db = dense_backward(cache["flat"], a["enc_mask_fc_w"], d_fm_pre)
        grads["enc_mask_fc_w"] = dw
        grads["enc_mask_fc_b"] = db
        du = dflat.reshape(cache["conv_acts"][-1].shape)
        for i in reversed(range(len(cfg.conv_channels))):
            du = relu_grad(cache["conv_pres"][i], du)
            du, dw, db = conv2d_backward(cache["conv_acts"][i], a[f"enc_conv{i}_w"], cfg.stride, du)
            grads[f"enc_conv{i}_w"] = dw
            grads[f"enc_conv{i}_b"] = db
    if cfg.has_box_branch:
        dfb = df_cat[:, col : col + cfg.latent]
        d_fb_pre = relu_grad(cache["fb_pre"], dfb)
        _, dw, db = dense_backward(cache["x_b"], a["enc_box_fc_w"], d_fb_pre)
        grads["enc_box_fc_w"] = dw
        grads["enc_box_fc_b"] = db

    return value, grads


def backward(
    p: AutoencoderParams,
    x_m: Optional[np.ndarray],
    x_b: Optional[np.ndarray],
    t_m: Optional[np.ndarray] = None,
    t_b: Optional[np.ndarray] = None,
) -> dict[str, np.ndarray]:
    """Exact gradients of :func:`loss` for every parameter array."""
    return loss_and_grads(p, x_m, x_b, t_m, t_b)[1]
