"""Training loop, embedding extraction, and constraint-threshold calibration."""

from __future__ import annotations

import warnings

import numpy as np

from ..core import Detection, normalize_box
from ..synthgen import GtSequence
from .adadelta import adadelta_init, adadelta_step
from .model import AutoencoderConfig, AutoencoderParams, _forward_cache, glorot_init, loss_and_grads
from .preprocess import preprocess_mask

__all__ = [
    "TrainingDiverged",
    "build_training_set",
    "train",
    "embed",
    "embed_batch",
    "calibrate_embed_threshold",
]


class TrainingDiverged(RuntimeError):
    pass


def build_training_set(sequences: list[GtSequence], cfg: AutoencoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Stack preprocessed (mask, box) pairs from ground-truth sequences."""
    masks = []
    boxes = []
    for seq in sequences:
        fw, fh = seq.config.frame_w, seq.config.frame_h
        for fr in seq.frames:
            for det in fr.detections:
                if det.mask.area() == 0:
                    continue
                masks.append(preprocess_mask(det.mask, cfg.mask_size))
                boxes.append(normalize_box(det.box, fw, fh))
    if not masks:
        raise ValueError("no usable detections in the training sequences")
    return np.stack(masks), np.stack(boxes)


def train(
    x_m: np.ndarray,
    x_b: np.ndarray,
    cfg: AutoencoderConfig,
    epochs: int = 50,
    batch_size: int = 64,
    seed: int = 0,
    rho: float = 0.95,
    eps: float = 1e-6,
    mtl: bool = True,
    box_target_noise: float = 0.0,
    verbose: bool = False,
) -> tuple[AutoencoderParams, list[float]]:
    """Train on stacked samples; returns params and per-epoch mean loss.

    With ``mtl=False`` the two log-variances are frozen at zero, which makes
    the loss the plain average of the two mean squared errors.
    ``box_target_noise`` adds fresh Gaussian noise to the box reconstruction
    targets each batch (used to probe uncertainty adaptation).
    """
    n = x_b.shape[0] if cfg.has_box_branch else x_m.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    params = glorot_init(cfg, seed)
    frozen: frozenset[str] = frozenset()
    if not mtl:
        for name in ("s_m", "s_b"):
            if name in params.arrays:
                params.arrays[name] = np.array(0.0)
        frozen = frozenset(("s_m", "s_b"))
    state = adadelta_init(params, rho=rho, eps=eps)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x73A1]))
    history: list[float] = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            bm = x_m[idx] if cfg.has_mask_branch else None
            bb = x_b[idx] if cfg.has_box_branch else None
            tb = bb
            if box_target_noise > 0.0 and cfg.has_box_branch:
                tb = bb + rng.normal(0.0, box_target_noise, size=bb.shape)
            value, grads = loss_and_grads(params, bm, bb, t_m=bm, t_b=tb)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, sample offset {start}: {value}"
                )
            params, state = adadelta_step(state, params, grads, frozen=frozen)
            epoch_losses.append(value)
        history.append(float(np.mean(epoch_losses)))
        if verbose:
            print(f"epoch {epoch + 1}/{epochs}: loss {history[-1]:.6f}")
    if len(history) >= 2 and history[-1] >= history[0]:
        warnings.warn(
            f"training loss did not improve ({history[0]:.4g} -> {history[-1]:.4g})",
            RuntimeWarning,
            stacklevel=2,
        )
    return params, history


def embed(params: AutoencoderParams, det: Detection, frame_dims: tuple[int, int]) -> np.ndarray:
    """Latent code of a single detection."""
    return embed_batch(params, [det], frame_dims)[0]


def embed_batch(
    params: AutoencoderParams, dets: list[Detection], frame_dims: tuple[int, int]
) -> np.ndarray:
    """Latent codes (n, F) for a list of detections from one frame size."""
    cfg = params.config
    fw, fh = frame_dims
    x_m = None
    x_b = None
    if cfg.has_mask_branch:
        x_m = np.stack([preprocess_mask(d.mask, cfg.mask_size) for d in dets])
        if cfg.channels == 3 and x_m.shape[-1] == 1:
            x_m = np.repeat(x_m, 3, axis=-1)
    if cfg.has_box_branch:
        x_b = np.stack([normalize_box(d.box, fw, fh) for d in dets])
    cache = _forward_cache(params, x_m, x_b)
    return cache["z"]


def calibrate_embed_threshold(
    params: AutoencoderParams, sequences: list[GtSequence], percentile: float = 95.0
) -> float:
    """Constraint-relaxation radius: a high percentile of the distance between
    consecutive-frame embeddings of the same ground-truth track."""
    dists: list[float] = []
    for seq in sequences:
        dims = (seq.config.frame_w, seq.config.frame_h)
        prev: dict[int, np.ndarray] = {}
        for fr in seq.frames:
            dets = [d for d in fr.detections if d.label is not None and d.mask.area() > 0]
            if dets:
                codes = embed_batch(params, dets, dims)
                cur = {d.label: z for d, z in zip(dets, codes)}
            else:
                cur = {}
            for label, z in cur.items():
                if label in prev:
                    dists.append(float(np.linalg.norm(z - prev[label])))
            prev = cur
    if not dists:
        raise ValueError("no same-track consecutive pairs available for calibration")
    return float(np.percentile(dists, percentile))
