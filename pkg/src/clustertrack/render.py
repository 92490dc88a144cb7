"""Overlay tracked masks and identity numbers onto frame images."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .core import Frame

__all__ = ["PALETTE", "render_frame", "render_sequence"]

PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (170, 110, 40),
]


def render_frame(fr: Frame, frame_w: int, frame_h: int, background: np.ndarray | None = None) -> Image.Image:
    if background is not None:
        canvas = np.stack([background] * 3, axis=2).astype(np.uint8)
    else:
        canvas = np.zeros((frame_h, frame_w, 3), dtype=np.uint8)
    img = Image.fromarray(canvas, mode="RGB")
    draw = ImageDraw.Draw(img)
    overlay = np.array(img)
    for det in fr.detections:
        if det.label is None:
            continue
        color = PALETTE[det.label % len(PALETTE)]
        x0 = int(round(det.box.cx - det.mask.width / 2.0))
        y0 = int(round(det.box.cy - det.mask.height / 2.0))
        sup = det.mask.support() > 0
        for dy, dx in zip(*np.nonzero(sup)):
            yy, xx = y0 + dy, x0 + dx
            if 0 <= yy < frame_h and 0 <= xx < frame_w:
                overlay[yy, xx] = color
    img = Image.fromarray(overlay, mode="RGB")
    draw = ImageDraw.Draw(img)
    for det in fr.detections:
        if det.label is None:
            continue
        tx = min(max(int(det.box.cx) - 3, 0), frame_w - 8)
        ty = min(max(int(det.box.cy) - 5, 0), frame_h - 10)
        draw.text((tx, ty), str(det.label), fill=(255, 255, 255))
    return img


def render_sequence(
    frames: list[Frame], frame_w: int, frame_h: int, out_dir: str | Path,
    backgrounds: dict[int, np.ndarray] | None = None,
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fr in frames:
        bg = backgrounds.get(fr.index) if backgrounds else None
        img = render_frame(fr, frame_w, frame_h, background=bg)
        path = out_dir / f"track_{fr.index:06d}.png"
        img.save(path)
        paths.append(path)
    return paths
