"""Tracking evaluation: event accumulation and summary measures.

Per-frame matching follows the CLEAR protocol: correspondences from the
previous frame are kept while their overlap stays above the threshold, and
the remainder is matched by minimum-cost assignment on (1 - IoU), gated at
the threshold. From the accumulated events:

    MOTA  = 1 - (FN + FP + IDS) / |GT|
    MOTSA = 1 - (FN + FP + IDS) / |GT|      (mask-matched events)
    sMOTSA = (sum of matched IoU - FP - IDS) / |GT|
    MOTSP  = sum of matched IoU / TP
    IDF1   = 2 IDTP / (|GT| + |HYP|), IDTP from an optimal global one-to-one
             matching of ground-truth tracks to hypothesis tracks.

An identity switch is counted when a ground-truth track's matched hypothesis
identity differs from its most recent one; a fragmentation when a track
resumes being matched after a gap. Mostly-tracked/mostly-lost use 80%/20%
coverage. With mask matching (the default here) MOTA and MOTSA coincide by
construction; box matching is available for box-level runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import BBox, Detection, Frame, detection_mask_iou

__all__ = ["MetricsReport", "hungarian", "match_frame", "evaluate", "box_iou", "format_report"]

_GATE_COST = 1e9


def box_iou(a: BBox, b: BBox) -> float:
    ix0 = max(a.x0, b.x0)
    iy0 = max(a.y0, b.y0)
    ix1 = min(a.x0 + a.w, b.x0 + b.w)
    iy1 = min(a.y0 + a.h, b.y0 + b.h)
    if ix0 >= ix1 or iy0 >= iy1:
        return 0.0
    inter = (ix1 - ix0) * (iy1 - iy0)
    return inter / (a.w * a.h + b.w * b.h - inter)


@dataclass
class MetricsReport:
    mota: float = 1.0
    motsa: float = 1.0
    smotsa: float = 1.0
    motsp: float = 1.0
    idf1: float = 1.0
    mt: int = 0
    ml_tracks: int = 0
    ids: int = 0
    frag: int = 0
    fn: int = 0
    fp: int = 0
    tp: int = 0
    gt_count: int = 0
    hyp_count: int = 0
    per_sequence: dict[str, "MetricsReport"] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "MOTA": self.mota,
            "MOTSA": self.motsa,
            "sMOTSA": self.smotsa,
            "MOTSP": self.motsp,
            "IDF1": self.idf1,
            "MT": self.mt,
            "ML": self.ml_tracks,
            "IDs": self.ids,
            "Frag": self.frag,
            "FN": self.fn,
            "FP": self.fp,
            "TP": self.tp,
            "GT": self.gt_count,
        }


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost assignment on a rectangular matrix (optimal, not greedy)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-d matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite values")
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


def _iou(gt: Detection, hyp: Detection, use_masks: bool) -> float:
    if use_masks:
        return detection_mask_iou(gt, hyp)
    return box_iou(gt.box, hyp.box)


def match_frame(
    gt: list[Detection],
    hyp: list[Detection],
    prev_matches: dict[int, int],
    use_masks: bool = True,
    threshold: float = 0.5,
) -> list[tuple[int, int, float]]:
    """Match one frame's detections; returns (gt index, hyp index, IoU) triples.

    ``prev_matches`` maps ground-truth identity to hypothesis identity from
    the previous frame; those pairs are kept first while still above the
    threshold, and the remainder is matched optimally.
    """
    matches: list[tuple[int, int, float]] = []
    free_gt = list(range(len(gt)))
    free_hyp = list(range(len(hyp)))
    hyp_by_label = {d.label: i for i, d in enumerate(hyp)}
    for gi, g in enumerate(gt):
        hi = hyp_by_label.get(prev_matches.get(g.label))
        if hi is None or hi not in free_hyp:
            continue
        iou = _iou(g, hyp[hi], use_masks)
        if iou > threshold:
            matches.append((gi, hi, iou))
            free_gt.remove(gi)
            free_hyp.remove(hi)
    if free_gt and free_hyp:
        cost = np.full((len(free_gt), len(free_hyp)), _GATE_COST)
        iou_mat = np.zeros_like(cost)
        for a, gi in enumerate(free_gt):
            for b, hi in enumerate(free_hyp):
                iou = _iou(gt[gi], hyp[hi], use_masks)
                iou_mat[a, b] = iou
                if iou > threshold:
                    cost[a, b] = 1.0 - iou
        rows, cols = hungarian(cost)
        for a, b in zip(rows, cols):
            if cost[a, b] < _GATE_COST:
                matches.append((free_gt[a], free_hyp[b], iou_mat[a, b]))
    return sorted(matches)


def evaluate(
    gt_frames: list[Frame],
    hyp_frames: list[Frame],
    use_masks: bool = True,
    threshold: float = 0.5,
) -> MetricsReport:
    """Accumulate CLEAR/MOTS events over aligned sequences.

    Ground truth must be fully labeled; hypothesis detections without labels
    are ignored. Hypothesis frames outside the ground-truth range are an
    error; missing frames count as empty.
    """
    gt_by_idx = {f.index: f for f in gt_frames}
    hyp_by_idx = {f.index: f for f in hyp_frames}
    extra = set(hyp_by_idx) - set(gt_by_idx)
    if extra:
        raise ValueError(f"hypothesis frames outside ground-truth range: {sorted(extra)[:5]}")

    rep = MetricsReport()
    soft_iou = 0.0
    last_hyp_of_gt: dict[int, int] = {}
    matched_prev: dict[int, int] = {}
    gt_frames_total: dict[int, int] = {}
    gt_frames_matched: dict[int, int] = {}
    pair_frames: dict[tuple[int, int], int] = {}
    hyp_total: dict[int, int] = {}

    for idx in sorted(gt_by_idx):
        gt = [d for d in gt_by_idx[idx].detections]
        for d in gt:
            if d.label is None:
                raise ValueError(f"unlabeled ground-truth detection in frame {idx}")
        hyp = [d for d in hyp_by_idx[idx].detections if d.label is not None] if idx in hyp_by_idx else []
        for d in gt:
            gt_frames_total[d.label] = gt_frames_total.get(d.label, 0) + 1
        for d in hyp:
            hyp_total[d.label] = hyp_total.get(d.label, 0) + 1

        matches = match_frame(gt, hyp, matched_prev, use_masks, threshold)
        matched_gt = set()
        new_matched: dict[int, int] = {}
        for gi, hi, iou in matches:
            g_label = gt[gi].label
            h_label = hyp[hi].label
            matched_gt.add(g_label)
            new_matched[g_label] = h_label
            soft_iou += iou
            rep.tp += 1
            if g_label in last_hyp_of_gt and last_hyp_of_gt[g_label] != h_label:
                rep.ids += 1
            if g_label in gt_frames_matched and g_label not in matched_prev:
                rep.frag += 1
            gt_frames_matched[g_label] = gt_frames_matched.get(g_label, 0) + 1
            last_hyp_of_gt[g_label] = h_label
            pair_frames[(g_label, h_label)] = pair_frames.get((g_label, h_label), 0) + 1
        rep.fn += len(gt) - len(matches)
        rep.fp += len(hyp) - len(matches)
        matched_prev = new_matched

    rep.gt_count = sum(gt_frames_total.values())
    rep.hyp_count = sum(hyp_total.values())
    denom = max(rep.gt_count, 1)
    rep.mota = 1.0 - (rep.fn + rep.fp + rep.ids) / denom
    rep.motsa = rep.mota
    rep.smotsa = (soft_iou - rep.fp - rep.ids) / denom
    rep.motsp = soft_iou / rep.tp if rep.tp else 0.0

    # IDF1: optimal one-to-one track matching maximizing co-matched frames
    gt_ids = sorted(gt_frames_total)
    hyp_ids = sorted(hyp_total)
    if gt_ids and hyp_ids:
        counts = np.zeros((len(gt_ids), len(hyp_ids)))
        for (g_label, h_label), c in pair_frames.items():
            counts[gt_ids.index(g_label), hyp_ids.index(h_label)] = c
        size = max(len(gt_ids), len(hyp_ids))
        padded = np.zeros((size, size))
        padded[: len(gt_ids), : len(hyp_ids)] = counts
        rows, cols = hungarian(-padded)
        idtp = float(padded[rows, cols].sum())
    else:
        idtp = 0.0
    total = rep.gt_count + rep.hyp_count
    rep.idf1 = 2.0 * idtp / total if total else 1.0

    for label, present in gt_frames_total.items():
        coverage = gt_frames_matched.get(label, 0) / present
        if coverage >= 0.8:
            rep.mt += 1
        elif coverage <= 0.2:
            rep.ml_tracks += 1
    return rep


def aggregate(reports: dict[str, MetricsReport]) -> MetricsReport:
    """Pool event counts across sequences and recompute the ratios."""
    agg = MetricsReport(per_sequence=dict(reports))
    soft = 0.0
    idtp_sum = 0.0
    for r in reports.values():
        agg.fn += r.fn
        agg.fp += r.fp
        agg.ids += r.ids
        agg.frag += r.frag
        agg.tp += r.tp
        agg.mt += r.mt
        agg.ml_tracks += r.ml_tracks
        agg.gt_count += r.gt_count
        agg.hyp_count += r.hyp_count
        soft += r.motsp * r.tp
        idtp_sum += r.idf1 * (r.gt_count + r.hyp_count) / 2.0
    denom = max(agg.gt_count, 1)
    agg.mota = 1.0 - (agg.fn + agg.fp + agg.ids) / denom
    agg.motsa = agg.mota
    agg.smotsa = (soft - agg.fp - agg.ids) / denom
    agg.motsp = soft / agg.tp if agg.tp else 0.0
    total = agg.gt_count + agg.hyp_count
    agg.idf1 = 2.0 * idtp_sum / total if total else 1.0
    return agg


def format_report(rep: MetricsReport, name: str = "") -> str:
    d = rep.as_dict()
    head = " ".join(f"{k:>7s}" for k in d)
    row = " ".join(f"{v:7.4f}" if isinstance(v, float) else f"{v:7d}" for v in d.values())
    prefix = f"[{name}]\n" if name else ""
    return f"{prefix}{head}\n{row}"
