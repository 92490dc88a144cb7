"""Shared domain types and mask/box primitives.

Masks are stored dense in memory (channel-last, row-major) and run-length
encoded only at I/O boundaries. A detection's mask is the tight crop around
the object; its placement in the frame comes from the bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "BBox",
    "Mask",
    "Detection",
    "Frame",
    "mask_iou",
    "detection_mask_iou",
    "rle_encode",
    "rle_decode",
    "normalize_box",
    "denormalize_box",
    "format_results",
    "parse_results",
]


@dataclass(frozen=True)
class BBox:
    """Bounding box as centroid plus dimensions, in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w}, h={self.h}")

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2.0

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2.0

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True)
class Mask:
    """Dense segmentation mask crop, channel-last.

    For ``channels == 1`` the data is binary (0/1). For ``channels == 3`` the
    values are RGB contents in [0, 1], zero outside the binary support.
    """

    width: int
    height: int
    channels: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("mask dimensions must be positive")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        d = np.asarray(self.data, dtype=np.float64)
        if d.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"data shape {d.shape} does not match (h={self.height}, w={self.width}, c={self.channels})"
            )
        if self.channels == 1:
            if not np.all((d == 0.0) | (d == 1.0)):
                raise ValueError("single-channel masks must be binary")
        else:
            if d.min() < 0.0 or d.max() > 1.0:
                raise ValueError("RGB mask values must lie in [0, 1]")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @classmethod
    def from_binary(cls, grid: np.ndarray) -> "Mask":
        g = np.asarray(grid, dtype=np.float64)
        if g.ndim == 2:
            g = g[:, :, None]
        return cls(width=g.shape[1], height=g.shape[0], channels=g.shape[2], data=g)

    def support(self) -> np.ndarray:
        """Binary support grid (h, w): channel-max > 0."""
        return (self.data.max(axis=2) > 0.0).astype(np.float64)

    def area(self) -> int:
        return int(self.support().sum())


@dataclass(frozen=True)
class Detection:
    """One observed object instance at one frame."""

    frame: int
    box: BBox
    mask: Mask
    confidence: float
    class_id: int
    label: Optional[int] = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.label is not None and self.label < 0:
            raise ValueError("identity label must be a nonnegative integer")

    def with_label(self, label: Optional[int]) -> "Detection":
        return replace(self, label=label)


@dataclass(frozen=True)
class Frame:
    """All detections observed at one timestamp."""

    index: int
    detections: tuple[Detection, ...]
    image: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", tuple(self.detections))
        for d in self.detections:
            if d.frame != self.index:
                raise ValueError(f"detection frame {d.frame} != frame index {self.index}")


def mask_iou(a: Mask, b: Mask) -> float:
    """Intersection over union of two same-sized masks' binary supports.

    Returns 0.0 when the union is empty.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"mask dimensions differ: {(a.width, a.height)} vs {(b.width, b.height)}"
        )
    sa = a.support() > 0
    sb = b.support() > 0
    union = np.logical_or(sa, sb).sum()
    if union == 0:
        return 0.0
    inter = np.logical_and(sa, sb).sum()
    return float(inter) / float(union)


def _anchor(det: Detection) -> tuple[int, int]:
    """Integer top-left pixel of the mask crop inside the frame."""
    x0 = int(round(det.box.cx - det.mask.width / 2.0))
    y0 = int(round(det.box.cy - det.mask.height / 2.0))
    return x0, y0


def detection_mask_iou(a: Detection, b: Detection) -> float:
    """IoU of two detections' binary supports placed at their frame positions.

    Works directly on the crop overlap region, so no full-frame canvas is
    allocated.
    """
    ax0, ay0 = _anchor(a)
    bx0, by0 = _anchor(b)
    sa = a.mask.support()
    sb = b.mask.support()
    area_a = sa.sum()
    area_b = sb.sum()
    if area_a == 0 and area_b == 0:
        return 0.0
    ix0 = max(ax0, bx0)
    iy0 = max(ay0, by0)
    ix1 = min(ax0 + a.mask.width, bx0 + b.mask.width)
    iy1 = min(ay0 + a.mask.height, by0 + b.mask.height)
    if ix0 >= ix1 or iy0 >= iy1:
        inter = 0.0
    else:
        ra = sa[iy0 - ay0 : iy1 - ay0, ix0 - ax0 : ix1 - ax0]
        rb = sb[iy0 - by0 : iy1 - by0, ix0 - bx0 : ix1 - bx0]
        inter = float(np.logical_and(ra > 0, rb > 0).sum())
    union = float(area_a + area_b) - inter
    if union == 0:
        return 0.0
    return inter / union


def rle_encode(m: Mask) -> str:
    """Column-major run-length string of the mask's binary support.

    Alternating run counts, starting with a background (zero) run; counts sum
    to width*height. An all-zero 4x4 mask encodes as ``"16"``, an all-one one
    as ``"0 16"``. This is a plain-text scheme, not COCO-compatible.
    """
    flat = m.support().flatten(order="F").astype(np.int8)
    n = flat.size
    # run boundaries: indices where the value changes
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [n]))
    runs = np.diff(bounds)
    if flat[0] == 1:
        runs = np.concatenate(([0], runs))
    return " ".join(str(int(r)) for r in runs)


def rle_decode(s: str, width: int, height: int) -> Mask:
    """Inverse of :func:`rle_encode`; returns a binary single-channel mask."""
    parts = s.split()
    if not parts:
        raise ValueError("empty run-length string")
    try:
        runs = [int(p) for p in parts]
    except ValueError as exc:
        raise ValueError(f"malformed run-length string: {s!r}") from exc
    if any(r < 0 for r in runs):
        raise ValueError("run counts must be nonnegative")
    total = sum(runs)
    if total != width * height:
        raise ValueError(f"run counts sum to {total}, expected {width * height}")
    flat = np.zeros(width * height, dtype=np.float64)
    pos = 0
    val = 0.0
    for r in runs:
        if val == 1.0:
            flat[pos : pos + r] = 1.0
        pos += r
        val = 1.0 - val
    grid = flat.reshape((height, width), order="F")
    return Mask.from_binary(grid)


def normalize_box(b: BBox, frame_w: float, frame_h: float) -> np.ndarray:
    """Scale a pixel-space box to frame-relative coordinates in [0, 1]."""
    if frame_w <= 0 or frame_h <= 0:
        raise ValueError("frame dimensions must be positive")
    v = np.array(
        [b.cx / frame_w, b.cy / frame_h, b.w / frame_w, b.h / frame_h],
        dtype=np.float64,
    )
    return np.clip(v, 0.0, 1.0)


def denormalize_box(v: np.ndarray, frame_w: float, frame_h: float) -> BBox:
    """Inverse of :func:`normalize_box` (exact for in-range boxes)."""
    if frame_w <= 0 or frame_h <= 0:
        raise ValueError("frame dimensions must be positive")
    return BBox(cx=v[0] * frame_w, cy=v[1] * frame_h, w=v[2] * frame_w, h=v[3] * frame_h)


# --- results file format -----------------------------------------------------
#
# One line per labeled detection:
#
#     frame id class_id img_height img_width rle
#
# where rle is the column-major run-length string above computed on the
# full-frame support (the crop placed at its box position).


def _full_frame_support(det: Detection, frame_w: int, frame_h: int) -> np.ndarray:
    canvas = np.zeros((frame_h, frame_w), dtype=np.float64)
    x0, y0 = _anchor(det)
    sx0, sy0 = max(0, -x0), max(0, -y0)
    dx0, dy0 = max(0, x0), max(0, y0)
    w = min(det.mask.width - sx0, frame_w - dx0)
    h = min(det.mask.height - sy0, frame_h - dy0)
    if w > 0 and h > 0:
        canvas[dy0 : dy0 + h, dx0 : dx0 + w] = det.mask.support()[sy0 : sy0 + h, sx0 : sx0 + w]
    return canvas


def format_results(frames: list[Frame], frame_w: int, frame_h: int) -> str:
    """Serialize labeled detections to the results text format.

    Unlabeled detections are skipped.
    """
    lines = []
    for fr in frames:
        for det in fr.detections:
            if det.label is None:
                continue
            support = _full_frame_support(det, frame_w, frame_h)
            rle = rle_encode(Mask.from_binary(support))
            lines.append(f"{fr.index} {det.label} {det.class_id} {frame_h} {frame_w} {rle}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_results(text: str) -> list[Frame]:
    """Parse the results text format back into frames of labeled detections.

    Boxes are recovered as tight bounds of the decoded full-frame support;
    masks are re-cropped to those bounds. Confidence is not stored in the
    format and is read back as 1.0.
    """
    by_frame: dict[int, list[Detection]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(maxsplit=5)
        if len(parts) != 6:
            raise ValueError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        t, label, class_id, img_h, img_w, rle = parts
        t, label, class_id, img_h, img_w = int(t), int(label), int(class_id), int(img_h), int(img_w)
        full = rle_decode(rle, img_w, img_h)
        sup = full.support()
        ys, xs = np.nonzero(sup)
        if ys.size == 0:
            raise ValueError(f"line {lineno}: empty mask")
        x0, x1 = int(xs.min()), int(xs.max())
        y0, y1 = int(ys.min()), int(ys.max())
        crop = sup[y0 : y1 + 1, x0 : x1 + 1]
        box = BBox(cx=x0 + (x1 - x0 + 1) / 2.0, cy=y0 + (y1 - y0 + 1) / 2.0, w=x1 - x0 + 1, h=y1 - y0 + 1)
        det = Detection(
            frame=t,
            box=box,
            mask=Mask.from_binary(crop),
            confidence=1.0,
            class_id=class_id,
            label=label,
        )
        by_frame.setdefault(t, []).append(det)
    return [Frame(index=t, detections=tuple(dets)) for t, dets in sorted(by_frame.items())]
