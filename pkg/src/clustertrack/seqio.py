"""Sequence directory format: ``seq.json`` plus optional rendered PNG frames.

``seq.json`` stores the generator config echo and one record per detection
with its box, run-length-coded mask crop, confidence, class and (for
ground-truth sequences) identity label.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .core import BBox, Detection, Frame, rle_decode, rle_encode
from .synthgen import GtSequence, SynthConfig

__all__ = ["save_sequence", "load_sequence", "frame_image", "write_frame_pngs"]

FORMAT_VERSION = 1


def _det_record(det: Detection) -> dict:
    return {
        "box": [det.box.cx, det.box.cy, det.box.w, det.box.h],
        "mask_w": det.mask.width,
        "mask_h": det.mask.height,
        "rle": rle_encode(det.mask),
        "confidence": det.confidence,
        "class_id": det.class_id,
        "label": det.label,
    }


def _det_from_record(rec: dict, frame_idx: int) -> Detection:
    cx, cy, w, h = rec["box"]
    mask = rle_decode(rec["rle"], rec["mask_w"], rec["mask_h"])
    return Detection(
        frame=frame_idx,
        box=BBox(cx=cx, cy=cy, w=w, h=h),
        mask=mask,
        confidence=rec["confidence"],
        class_id=rec["class_id"],
        label=rec["label"],
    )


def save_sequence(directory: str | Path, seq: GtSequence, write_png: bool = False) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(seq.config),
        "frames": [
            {"index": fr.index, "detections": [_det_record(d) for d in fr.detections]}
            for fr in seq.frames
        ],
    }
    path = directory / "seq.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    if write_png:
        write_frame_pngs(directory, seq)
    return path


def load_sequence(directory: str | Path) -> GtSequence:
    path = Path(directory) / "seq.json"
    doc = json.loads(path.read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported sequence format version {doc.get('format_version')!r}")
    cfg = SynthConfig(**doc["config"])
    frames = tuple(
        Frame(
            index=fr["index"],
            detections=tuple(_det_from_record(rec, fr["index"]) for rec in fr["detections"]),
        )
        for fr in doc["frames"]
    )
    return GtSequence(frames=frames, config=cfg)


def frame_image(fr: Frame, frame_w: int, frame_h: int) -> np.ndarray:
    """Grayscale composite of all detection supports (uint8, 0 or 255)."""
    canvas = np.zeros((frame_h, frame_w), dtype=np.uint8)
    for det in fr.detections:
        x0 = int(round(det.box.cx - det.mask.width / 2.0))
        y0 = int(round(det.box.cy - det.mask.height / 2.0))
        sx0, sy0 = max(0, -x0), max(0, -y0)
        dx0, dy0 = max(0, x0), max(0, y0)
        w = min(det.mask.width - sx0, frame_w - dx0)
        h = min(det.mask.height - sy0, frame_h - dy0)
        if w <= 0 or h <= 0:
            continue
        region = canvas[dy0 : dy0 + h, dx0 : dx0 + w]
        sup = det.mask.support()[sy0 : sy0 + h, sx0 : sx0 + w] > 0
        region[sup] = 255
    return canvas


def write_frame_pngs(directory: str | Path, seq: GtSequence) -> None:
    from PIL import Image

    directory = Path(directory)
    for fr in seq.frames:
        img = frame_image(fr, seq.config.frame_w, seq.config.frame_h)
        Image.fromarray(img, mode="L").save(directory / f"frame_{fr.index:06d}.png")
