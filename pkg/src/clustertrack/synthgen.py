"""Synthetic multi-object sequences with ground-truth identities.

Objects are binary sprites (square, circle, triangle, diamond) or digit
glyphs (classes 0-8) moving with constant velocity plus small per-frame
heading jitter. Overlaps resolve by z-order (higher label on top), so each
detection carries the visible-region mask. Everything is a pure function of
the config seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .core import BBox, Detection, Frame, Mask

__all__ = [
    "SynthConfig",
    "GtSequence",
    "generate_sequence",
    "perturb_detections",
    "sprite_template",
    "glyph_template",
    "SPRITE_KINDS",
    "NUM_GLYPHS",
]

SPRITE_KINDS = ("square", "circle", "triangle", "diamond")
NUM_GLYPHS = 9


@dataclass(frozen=True)
class SynthConfig:
    frame_w: int = 128
    frame_h: int = 128
    object_size: int = 28
    density: int = 3
    birth_prob: float = 0.5
    mean_speed: float = 5.3
    speed_std: float = 1.0
    heading_jitter_deg: float = 15.0
    num_frames: int = 500
    shape_set: str = "sprites"
    occlusion: str = "amodal"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.object_size >= min(self.frame_w, self.frame_h):
            raise ValueError("object_size must be smaller than the frame")
        if self.density < 1:
            raise ValueError("density must be >= 1")
        if not (0.0 <= self.birth_prob <= 1.0):
            raise ValueError("birth_prob must be in [0, 1]")
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if self.shape_set not in ("sprites", "digits"):
            raise ValueError(f"unknown shape_set {self.shape_set!r}")
        if self.occlusion not in ("amodal", "visible"):
            raise ValueError(f"unknown occlusion mode {self.occlusion!r}")

    @property
    def num_kinds(self) -> int:
        return len(SPRITE_KINDS) if self.shape_set == "sprites" else NUM_GLYPHS


@dataclass(frozen=True)
class GtSequence:
    frames: tuple[Frame, ...]
    config: SynthConfig

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))

    def num_detections(self) -> int:
        return sum(len(f.detections) for f in self.frames)


def sprite_template(kind: str, size: int) -> np.ndarray:
    """Rasterize one geometric sprite as a binary (size, size) grid."""
    if kind == "square":
        return np.ones((size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    if kind == "circle":
        r = size / 2.0
        return ((xx - c) ** 2 + (yy - c) ** 2 <= r * r).astype(float)
    if kind == "triangle":
        # upward triangle: row y spans a width growing linearly to the base
        half = (yy + 1) / (2.0 * size) * size
        return (np.abs(xx - c) <= half).astype(float)
    if kind == "diamond":
        return (np.abs(xx - c) + np.abs(yy - c) <= size / 2.0).astype(float)
    raise ValueError(f"unknown sprite kind {kind!r}")


def _load_glyph_grids() -> list[np.ndarray]:
    text = resources.files("clustertrack.data").joinpath("glyphs.txt").read_text()
    grids: list[np.ndarray] = []
    block: list[str] = []
    for line in text.splitlines():
        if line.startswith(";"):
            continue
        if not line.strip():
            if block:
                grids.append(np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in block]))
                block = []
            continue
        block.append(line.rstrip())
    if block:
        grids.append(np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in block]))
    if len(grids) != NUM_GLYPHS:
        raise RuntimeError(f"expected {NUM_GLYPHS} glyph templates, found {len(grids)}")
    return grids


_GLYPH_GRIDS = _load_glyph_grids()


def _scale_binary(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor scale of a binary grid."""
    h, w = grid.shape
    ys = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(int)
    xs = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(int)
    return grid[np.ix_(ys, xs)]


def glyph_template(digit: int, size: int) -> np.ndarray:
    """Digit glyph scaled so its height equals ``size`` (width keeps aspect)."""
    g = _GLYPH_GRIDS[digit]
    h, w = g.shape
    out_w = max(1, round(w * size / h))
    return _scale_binary(g, size, out_w)


def _template(cfg: SynthConfig, kind: int) -> np.ndarray:
    if cfg.shape_set == "sprites":
        return sprite_template(SPRITE_KINDS[kind], cfg.object_size)
    return glyph_template(kind, cfg.object_size)


@dataclass
class _LiveObject:
    label: int
    kind: int
    template: np.ndarray
    cx: float
    cy: float
    speed: float
    heading: float


def _paint(canvas: np.ndarray, obj: _LiveObject) -> None:
    th, tw = obj.template.shape
    fh, fw = canvas.shape
    x0 = int(round(obj.cx - tw / 2.0))
    y0 = int(round(obj.cy - th / 2.0))
    sx0, sy0 = max(0, -x0), max(0, -y0)
    dx0, dy0 = max(0, x0), max(0, y0)
    w = min(tw - sx0, fw - dx0)
    h = min(th - sy0, fh - dy0)
    if w <= 0 or h <= 0:
        return
    region = canvas[dy0 : dy0 + h, dx0 : dx0 + w]
    sup = obj.template[sy0 : sy0 + h, sx0 : sx0 + w] > 0
    region[sup] = obj.label


def generate_sequence(cfg: SynthConfig) -> GtSequence:
    """Generate one ground-truth sequence; deterministic for a fixed seed."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5E9]))
    live: list[_LiveObject] = []
    next_label = 0
    frames: list[Frame] = []

    for t in range(cfg.num_frames):
        # births: one Bernoulli trial per vacant slot
        vacancies = cfg.density - len(live)
        for _ in range(vacancies):
            if rng.random() >= cfg.birth_prob:
                continue
            kind = int(rng.integers(cfg.num_kinds))
            tpl = _template(cfg, kind)
            th, tw = tpl.shape
            cx = rng.uniform(tw / 2.0, cfg.frame_w - tw / 2.0)
            cy = rng.uniform(th / 2.0, cfg.frame_h - th / 2.0)
            speed = max(0.5, rng.normal(cfg.mean_speed, cfg.speed_std))
            heading = rng.uniform(0.0, 2.0 * math.pi)
            live.append(_LiveObject(next_label, kind, tpl, cx, cy, speed, heading))
            next_label += 1

        # render: ascending label, higher (younger) labels painted on top;
        # in amodal mode each object keeps its full raster (frame-cropped only)
        canvas = np.full((cfg.frame_h, cfg.frame_w), -1, dtype=np.int64)
        if cfg.occlusion == "visible":
            for obj in sorted(live, key=lambda o: o.label):
                _paint(canvas, obj)

        dets: list[Detection] = []
        for obj in sorted(live, key=lambda o: o.label):
            if cfg.occlusion == "amodal":
                canvas.fill(-1)
                _paint(canvas, obj)
            ys, xs = np.nonzero(canvas == obj.label)
            if ys.size == 0:
                continue  # fully occluded or fully outside this frame
            x0, x1 = int(xs.min()), int(xs.max())
            y0, y1 = int(ys.min()), int(ys.max())
            crop = (canvas[y0 : y1 + 1, x0 : x1 + 1] == obj.label).astype(np.float64)
            box = BBox(
                cx=x0 + (x1 - x0 + 1) / 2.0,
                cy=y0 + (y1 - y0 + 1) / 2.0,
                w=float(x1 - x0 + 1),
                h=float(y1 - y0 + 1),
            )
            dets.append(
                Detection(
                    frame=t,
                    box=box,
                    mask=Mask.from_binary(crop),
                    confidence=1.0,
                    class_id=0,
                    label=obj.label,
                )
            )
        frames.append(Frame(index=t, detections=tuple(dets)))

        # advance motion, then retire objects whose center left the frame
        survivors: list[_LiveObject] = []
        for obj in live:
            obj.heading += math.radians(rng.normal(0.0, cfg.heading_jitter_deg))
            obj.cx += obj.speed * math.cos(obj.heading)
            obj.cy += obj.speed * math.sin(obj.heading)
            if not (0.0 <= obj.cx < cfg.frame_w and 0.0 <= obj.cy < cfg.frame_h):
                continue
            survivors.append(obj)
        live = survivors

    return GtSequence(frames=tuple(frames), config=cfg)


def perturb_detections(
    seq: GtSequence, drop_prob: float, conf_noise: float, seed: int
) -> GtSequence:
    """Detector-noise stand-in: random drops, degraded confidences, no labels."""
    if not (0.0 <= drop_prob <= 1.0 and 0.0 <= conf_noise <= 1.0):
        raise ValueError("drop_prob and conf_noise must be in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD40]))
    frames: list[Frame] = []
    for fr in seq.frames:
        kept: list[Detection] = []
        for det in fr.detections:
            if rng.random() < drop_prob:
                continue
            conf = float(np.clip(1.0 - rng.random() * conf_noise, 0.0, 1.0))
            kept.append(replace(det, confidence=conf, label=None))
        frames.append(Frame(index=fr.index, detections=tuple(kept)))
    return GtSequence(frames=tuple(frames), config=seq.config)
