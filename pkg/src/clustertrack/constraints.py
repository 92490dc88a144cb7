"""Pairwise association constraints over a temporal window of detections.

Cannot-link edges separate detections that cannot be the same object:
same-frame pairs, cross-class pairs, pairs carrying different committed
identities, and temporally close pairs that fail a spatial proximity test.
Must-link edges bind detections that share a committed identity across
frames. Identity knowledge takes precedence over the spatial heuristic, so
a pair that qualifies as must-link is never given a spatial cannot-link.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Detection, detection_mask_iou

__all__ = ["ConstraintConfig", "ConstraintGraph", "ConstraintConflictError", "build_graph", "empty_graph"]

MODES = ("mask_iou", "embedding_distance")


class ConstraintConflictError(ValueError):
    """A pair of detections qualified as both cannot-link and must-link."""


@dataclass(frozen=True)
class ConstraintConfig:
    tau: int = 1
    mode: str = "embedding_distance"
    embed_dist_max: float = 0.0

    def __post_init__(self) -> None:
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class ConstraintGraph:
    """Window-scoped nodes with symmetric cannot-link/must-link edge sets.

    Edges are stored as index pairs (i, j) with i < j.
    """

    detections: list[Detection]
    cl_edges: set[tuple[int, int]] = field(default_factory=set)
    ml_edges: set[tuple[int, int]] = field(default_factory=set)

    def __post_init__(self) -> None:
        overlap = self.cl_edges & self.ml_edges
        if overlap:
            raise ConstraintConflictError(f"pairs in both edge sets: {sorted(overlap)[:5]}")
        for i, j in list(self.cl_edges) + list(self.ml_edges):
            if i == j:
                raise ValueError("self edges are not allowed")
            if not (0 <= i < j < len(self.detections)):
                raise ValueError(f"edge ({i}, {j}) out of range or unnormalized")

    def __len__(self) -> int:
        return len(self.detections)

    def has_cl(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.cl_edges

    def ml_components(self) -> list[list[int]]:
        """Connected components of the must-link graph (singletons included)."""
        parent = list(range(len(self.detections)))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j in self.ml_edges:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        groups: dict[int, list[int]] = {}
        for i in range(len(self.detections)):
            groups.setdefault(find(i), []).append(i)
        return [sorted(g) for _, g in sorted(groups.items())]


def empty_graph(detections: list[Detection]) -> ConstraintGraph:
    """Nodes without any constraints (ablation variants without the graph)."""
    return ConstraintGraph(detections=list(detections))


def _must_link(a: Detection, b: Detection) -> bool:
    return (
        a.label is not None
        and a.label == b.label
        and a.frame != b.frame
        and a.class_id == b.class_id
    )


def build_graph(
    detections: list[Detection],
    embeddings: Optional[np.ndarray],
    cfg: ConstraintConfig,
) -> ConstraintGraph:
    """Construct the constraint graph for one window.

    ``detections`` carry the committed identity (or ``None``) in their label
    field and the window timestamp in their frame field. ``embeddings`` is
    required in embedding_distance mode, aligned with ``detections``.
    """
    n = len(detections)
    if cfg.mode == "embedding_distance":
        if embeddings is None:
            raise ValueError("embedding_distance mode requires embeddings")
        if len(embeddings) != n:
            raise ValueError("embeddings do not align with detections")
    cl: set[tuple[int, int]] = set()
    ml: set[tuple[int, int]] = set()
    for i in range(n):
        a = detections[i]
        for j in range(i + 1, n):
            b = detections[j]
            if _must_link(a, b):
                ml.add((i, j))
                continue
            if a.frame == b.frame or a.class_id != b.class_id:
                cl.add((i, j))
                continue
            if a.label is not None and b.label is not None and a.label != b.label:
                # committed identities differ: never associate
                cl.add((i, j))
                continue
            if abs(a.frame - b.frame) <= cfg.tau:
                if cfg.mode == "mask_iou":
                    far = detection_mask_iou(a, b) == 0.0
                else:
                    far = float(np.linalg.norm(embeddings[i] - embeddings[j])) > cfg.embed_dist_max
                if far:
                    cl.add((i, j))
    return ConstraintGraph(detections=list(detections), cl_edges=cl, ml_edges=ml)
